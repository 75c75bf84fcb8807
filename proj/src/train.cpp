#include "gaitasms/train.hpp"

#include <cmath>
#include <sstream>

namespace gaitasms {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !(lr_after_drop >= 0.0)) throw ConfigError("train: learning rates must be non-negative");
  if (total_steps < 0) throw ConfigError("train: total_steps must be non-negative");
  if (lr_drop_step < 0 || (total_steps > 0 && lr_drop_step >= total_steps))
    throw ConfigError("train: lr drop step " + std::to_string(lr_drop_step) + " must lie before total_steps " +
                      std::to_string(total_steps));
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
  if (!std::isfinite(triplet.margin) || triplet.margin < 0.0) throw ConfigError("train: margin must be >= 0");
  if (!(erasing_rate >= 0.0 && erasing_rate <= 1.0)) throw ConfigError("train: erasing rate must lie in [0, 1]");
  if (checkpoint_every < 0 || log_every < 0) throw ConfigError("train: intervals must be non-negative");
  sampler.validate();
  mask.validate();
}

namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> words) {
  std::vector<std::uint32_t> seq;
  for (auto w : words) {
    seq.push_back(static_cast<std::uint32_t>(w));
    seq.push_back(static_cast<std::uint32_t>(w >> 32));
  }
  std::seed_seq s(seq.begin(), seq.end());
  return std::mt19937_64(s);
}

ParamStore<float> zeros_like_trainable(const ParamStore<float>& params) {
  ParamStore<float> out;
  for (const auto& e : params.entries())
    if (e.trainable) out.add(e.name, Tensor<float>::zeros(e.value.shape()), false);
  return out;
}

}  // namespace

TrainingState init_training(const ModelConfig& model, const TrainConfig& cfg) {
  model.validate();
  cfg.validate();
  TrainingState s;
  s.model = model;
  s.params = init_parameters<float>(model, seeded({cfg.seed, 0x706172616d73ULL})());
  s.adam_m = zeros_like_trainable(s.params);
  s.adam_v = zeros_like_trainable(s.params);
  s.sample_rng = seeded({cfg.seed, 0x73616d706c65ULL});
  s.mask_rng = seeded({cfg.seed, cfg.mask.seed, 0x6d61736bULL});
  return s;
}

LabelMap::LabelMap(const std::vector<SilhouetteSequence>& pool) {
  for (const auto& s : pool) classes_.emplace(s.subject, 0);
  int next = 0;
  for (auto& [subject, label] : classes_) label = next++;
}

int LabelMap::operator()(int subject) const {
  auto it = classes_.find(subject);
  if (it == classes_.end()) throw std::out_of_range("label map: subject " + std::to_string(subject) + " is not a training subject");
  return it->second;
}

std::vector<int> LabelMap::labels(const std::vector<SilhouetteSequence>& batch) const {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back((*this)(s.subject));
  return out;
}

std::vector<SilhouetteSequence> draw_batch(TrainingState& state, const std::vector<SilhouetteSequence>& pool,
                                           const TrainConfig& cfg) {
  auto batch = pk_sample(pool, cfg.sampler, state.sample_rng);
  if (cfg.use_mask) batch = random_mask(std::move(batch), cfg.mask, state.mask_rng);
  if (cfg.erasing_rate > 0.0) batch = random_erasing(std::move(batch), cfg.erasing_rate, cfg.mask, state.mask_rng);
  return batch;
}

namespace {

std::string describe(const std::vector<SilhouetteSequence>& batch, const StepLosses& l) {
  std::ostringstream os;
  os << "non-finite loss at step " << l.step << " (triplet " << l.triplet << ", cross-entropy " << l.cross_entropy
     << "); batch:";
  for (const auto& s : batch) os << " " << s.subject << "/" << s.condition.name() << "/" << s.view;
  return os.str();
}

}  // namespace

StepLosses train_step(TrainingState& state, const std::vector<SilhouetteSequence>& batch,
                      const std::vector<int>& labels, const TrainConfig& cfg) {
  if (cfg.use_cross_entropy && state.model.class_count < 2)
    throw ConfigError("train: cross-entropy needs model.class_count >= 2");
  // Work on copies so a rejected step leaves the state as it was.
  ParamStore<float> params = state.params;
  StepLosses out;
  out.step = state.step;
  out.lr = cfg.lr_at(state.step);

  Tape<float> tape;
  tape.set_finite_check(false);
  const auto bound = bind_parameters(tape, params, true);
  const auto x = tape.constant(stack_sequences(batch));
  const auto head = model_forward(x, state.model, bound, true);
  const auto tri = triplet_batch_all(head.embeddings, labels, cfg.triplet);
  auto loss = tri;
  if (cfg.use_cross_entropy) {
    const auto cse = cross_entropy(*head.logits, labels);
    out.cross_entropy = cse.value()[0];
    loss = combined_loss(tri, cse);
  }
  out.triplet = tri.value()[0];
  out.total = loss.value()[0];
  if (!std::isfinite(out.total)) throw NonFiniteLoss(describe(batch, out), batch);

  tape.backward(loss);
  const double t = static_cast<double>(state.step + 1);
  const auto b1 = static_cast<float>(cfg.adam.beta1), b2 = static_cast<float>(cfg.adam.beta2);
  const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.adam.beta1, t)));
  const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.adam.beta2, t)));
  const auto lr = static_cast<float>(out.lr), eps = static_cast<float>(cfg.adam.epsilon);
  ParamStore<float> m = state.adam_m, v = state.adam_v;
  for (const auto& [pos, var] : bound.trainable) {
    auto& p = params.entries()[pos];
    const Tensor<float> g = tape.grad(var);
    if (!g.all_finite()) throw NonFiniteLoss("non-finite gradient for " + p.name + "; " + describe(batch, out), batch);
    auto& ma = m.at(p.name).array();
    auto& va = v.at(p.name).array();
    ma = b1 * ma + (1.0f - b1) * g.array();
    va = b2 * va + (1.0f - b2) * g.array().square();
    p.value.array() -= lr * (ma * c1) / ((va * c2).sqrt() + eps);
  }
  state.params = std::move(params);
  state.adam_m = std::move(m);
  state.adam_v = std::move(v);
  ++state.step;
  return out;
}

void run_training(TrainingState& state, const std::vector<SilhouetteSequence>& pool, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  const LabelMap labels(pool);
  if (cfg.use_cross_entropy && state.model.class_count < labels.size())
    throw ConfigError("train: model.class_count " + std::to_string(state.model.class_count) + " is below the " +
                      std::to_string(labels.size()) + " training subjects");
  while (state.step < cfg.total_steps) {
    const auto batch = draw_batch(state, pool, cfg);
    const auto losses = train_step(state, batch, labels.labels(batch), cfg);
    if (on_step) on_step(losses, state);
  }
}

}  // namespace gaitasms
