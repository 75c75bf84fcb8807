// gaitasms: synth | train | eval | gradcheck | inspect-mask
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include "gaitasms/asre.hpp"
#include "gaitasms/config.hpp"
#include "gaitasms/evaluate.hpp"
#include "gaitasms/grad_suite.hpp"
#include "gaitasms/parallel.hpp"
#include "gaitasms/synth.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace gaitasms;

namespace {

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ValidationError(what + ": '" + s + "' is not an integer");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct SubjectRange {
  int first = 0, last = 0;
  bool contains(int s) const { return s >= first && s <= last; }
};

SubjectRange parse_range(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos) {
    const int v = parse_int(s, "--subjects");
    return {v, v};
  }
  SubjectRange r{parse_int(s.substr(0, dash), "--subjects"), parse_int(s.substr(dash + 1), "--subjects")};
  if (r.first > r.last) throw ValidationError("--subjects: empty range " + s);
  return r;
}

std::vector<SilhouetteSequence> select(const DatasetIndex& index, FrameSize size, const std::optional<SubjectRange>& range,
                                       std::optional<Split> fallback) {
  if (!range) return load_sequences(index, size, fallback);
  DatasetIndex picked;
  for (const auto& e : index.sequences)
    if (range->contains(e.subject)) picked.sequences.push_back(e);
  return load_sequences(picked, size);
}

DatasetIndex open_dataset(const fs::path& root) {
  auto index = load_casia_layout(root);
  if (index.warnings) std::cerr << "warning: skipped " << index.warnings << " malformed names under " << root << "\n";
  if (index.skipped) std::cerr << "warning: skipped " << index.skipped << " empty sequences\n";
  return index;
}

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".cfg"); }

void echo_config(const RunConfig& cfg) {
  std::cout << "# effective configuration\n" << config_text(cfg) << std::flush;
}

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& sets) {
  RunConfig cfg = file.empty() ? desk_config() : load_run_config(file, desk_config());
  for (const auto& s : sets) apply_override(cfg, s);
  return cfg;
}

// --- synth

struct SynthArgs {
  std::string out;
  int subjects = 8;
  int first_subject = 1;
  std::string views = "0,90";
  std::string conditions = "NM";
  int sequences = 1;
  long long frames = 40;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  SynthOptions opt;
  opt.num_subjects = a.subjects;
  opt.first_subject = a.first_subject;
  opt.sequences_per_condition = a.sequences;
  opt.frames = a.frames;
  opt.seed = a.seed;
  opt.views.clear();
  for (const auto& v : split_list(a.views)) opt.views.push_back(parse_int(v, "--views"));
  opt.conditions.clear();
  for (const auto& c : split_list(a.conditions)) {
    auto w = parse_walk(c);
    if (!w) throw ValidationError("--conditions: unknown walking condition '" + c + "'");
    opt.conditions.push_back(*w);
  }
  opt.validate();
  const fs::path root(a.out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!a.force) throw ValidationError("output directory " + root.string() + " is not empty (use --force)");
    fs::remove_all(root);
  }
  const std::size_t n = export_casia_layout(opt, root);
  std::cout << n << " sequences written to " << root.string() << "\n";
  return 0;
}

// --- train

struct TrainArgs {
  std::string data, config, out, resume, subjects;
  std::optional<long long> steps;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void dump_batch(const fs::path& dir, const std::vector<SilhouetteSequence>& batch) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    for (Index t = 0; t < s.length(); ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "%02zu-%03d-%s-%03d-%03lld.png", i, s.subject, s.condition.name().c_str(), s.view,
                    static_cast<long long>(t));
      write_png(dir / name, frame_at(s.frames, t));
    }
  }
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.steps) {
    if (*a.steps < 0) throw ValidationError("--steps must be non-negative");
    cfg.train.total_steps = *a.steps;
    // Keep the learning-rate drop inside the shortened schedule.
    if (cfg.train.lr_drop_step >= cfg.train.total_steps) cfg.train.lr_drop_step = cfg.train.total_steps * 7 / 8;
  }
  const auto range = a.subjects.empty() ? std::nullopt : std::optional(parse_range(a.subjects));
  auto pool = select(open_dataset(a.data), cfg.model.input, range, Split::Train);
  if (pool.empty()) throw ValidationError("no training sequences found under " + a.data);
  const LabelMap labels(pool);
  if (cfg.train.use_cross_entropy && cfg.model.class_count == 0) cfg.model.class_count = labels.size();
  cfg.validate();
  echo_config(cfg);

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  {
    std::ofstream side(sidecar(out));
    side << config_text(cfg);
    if (!side) throw IoError("cannot write " + sidecar(out).string());
  }
  TrainingState state = init_training(cfg.model, cfg.train);
  if (!a.resume.empty()) {
    restore_checkpoint(state, load_checkpoint(a.resume));
    std::cout << "resumed from " << a.resume << " at step " << state.step << "\n";
  }
  if (state.step > cfg.train.total_steps)
    throw ValidationError("checkpoint step " + std::to_string(state.step) + " is past total_steps");

  const fs::path log_path(out.string() + ".loss.csv");
  const bool append = !a.resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  if (!append) log << "step,L_tri,L_cse,L\n";
  log.precision(9);

  std::cout << labels.size() << " training subjects, " << pool.size() << " sequences, "
            << state.params.parameter_count() << " parameters\n";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run_training(state, pool, cfg.train, [&](const StepLosses& l, const TrainingState& s) {
      log << l.step << "," << l.triplet << "," << l.cross_entropy << "," << l.total << "\n";
      if (cfg.train.log_every > 0 && s.step % cfg.train.log_every == 0) {
        const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "step " << s.step << "  lr " << l.lr << "  L_tri " << l.triplet << "  L_cse " << l.cross_entropy
                  << "  L " << l.total << "  (" << el << " s)\n"
                  << std::flush;
      }
      if (cfg.train.checkpoint_every > 0 && s.step % cfg.train.checkpoint_every == 0 && s.step < cfg.train.total_steps)
        save_checkpoint(out, s);
    });
  } catch (const NonFiniteLoss& e) {
    log.flush();
    const fs::path dump(out.string() + ".nonfinite");
    dump_batch(dump, e.batch());
    std::cerr << "error: " << e.what() << "; offending batch written to " << dump.string() << "\n";
    return 2;
  }
  save_checkpoint(out, state);
  std::cout << "checkpoint written to " << out.string() << " at step " << state.step << "\n";
  return 0;
}

// --- eval

struct EvalArgs {
  std::string data, ckpt, config, protocol = "casia", subjects, report, embeddings;
  bool exclude = false;
  std::vector<std::string> sets;
};

RunConfig config_for_checkpoint(const std::string& ckpt, const std::string& config, const std::vector<std::string>& sets) {
  const std::string file = config.empty() ? sidecar(ckpt).string() : config;
  if (!fs::exists(file)) throw ValidationError("configuration " + file + " not found (pass --config)");
  return resolve_config(file, sets);
}

int cmd_eval(const EvalArgs& a) {
  const auto protocol = parse_protocol(a.protocol);
  if (!protocol) throw ValidationError("--protocol must be casia or flat, got '" + a.protocol + "'");
  RunConfig cfg = config_for_checkpoint(a.ckpt, a.config, a.sets);
  cfg.validate();
  echo_config(cfg);
  TrainingState state = init_training(cfg.model, cfg.train);
  restore_checkpoint(state, load_checkpoint(a.ckpt));

  const auto range = a.subjects.empty() ? std::nullopt : std::optional(parse_range(a.subjects));
  const auto fallback = *protocol == Protocol::Casia ? std::optional(Split::Test) : std::nullopt;
  const auto sequences = select(open_dataset(a.data), cfg.model.input, range, fallback);
  if (sequences.empty()) throw ValidationError("no evaluation sequences found under " + a.data);
  std::size_t skipped = 0;
  const auto emb = extract_embeddings(sequences, cfg.model, state.params, &skipped);
  if (skipped) std::cerr << "warning: " << skipped << " empty sequences skipped\n";
  if (!a.embeddings.empty()) write_embeddings(a.embeddings, emb);

  const auto split = split_protocol(emb, *protocol);
  const auto report = rank1_eval(split.gallery, split.probe, a.exclude);
  const std::string csv = rank1_csv(report);
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    f << csv;
    if (!f) throw IoError("cannot write " + a.report);
  }
  std::cout << csv;
  std::cout << "gallery " << split.gallery.size() << ", probes " << split.probe.size() << "\n";
  for (const auto& [walk, acc] : report.condition_means)
    std::cout << walk_name(walk) << " rank-1: " << (acc ? std::to_string(*acc * 100.0) + "%" : "NA") << "\n";
  std::cout << "mean rank-1: " << (report.mean ? std::to_string(*report.mean * 100.0) + "%" : "NA") << "\n";
  return 0;
}

// --- gradcheck

int cmd_gradcheck(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = gradient_suite(seed);
  int failures = 0;
  for (const auto& r : results) {
    const bool ok = r.error < kGradTolerance;
    failures += !ok;
    std::printf("%-4s %-48s %.3e\n", ok ? "ok" : "FAIL", r.name.c_str(), r.error);
  }
  const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks, %d failed, %.1f s\n", results.size(), failures, el);
  return failures ? 2 : 0;
}

// --- inspect-mask

struct InspectArgs {
  std::string data, ckpt, config, out;
  int sequence = 0;
  std::vector<std::string> sets;
};

int cmd_inspect_mask(const InspectArgs& a) {
  RunConfig cfg = config_for_checkpoint(a.ckpt, a.config, a.sets);
  cfg.validate();
  echo_config(cfg);
  // The edge mask depends only on the input and the threshold; loading the
  // checkpoint still validates that it belongs to this configuration.
  TrainingState state = init_training(cfg.model, cfg.train);
  restore_checkpoint(state, load_checkpoint(a.ckpt));
  const auto index = open_dataset(a.data);
  if (a.sequence < 0 || static_cast<std::size_t>(a.sequence) >= index.sequences.size())
    throw ValidationError("--sequence " + std::to_string(a.sequence) + " out of range (dataset has " +
                          std::to_string(index.sequences.size()) + ")");
  const auto& entry = index.sequences[static_cast<std::size_t>(a.sequence)];
  const auto seq = load_sequence(entry, cfg.model.input);
  const Tensor<float> x = seq.frames.reshaped({1, 1, seq.length(), seq.height(), seq.width()});
  const auto masks = edge_mask(temporal_stats(x), cfg.model.threshold);
  const fs::path out(a.out);
  fs::create_directories(out);
  const Tensor<float> edge = masks.edge.reshaped({seq.length(), seq.height(), seq.width()});
  for (Index t = 0; t < seq.length(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "mask-%03lld.png", static_cast<long long>(t));
    write_png(out / name, frame_at(edge, t));
  }
  std::cout << seq.length() << " mask frames for " << entry.path.string() << " written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"GaitASMS gait recognition: synthesis, training, evaluation and diagnostics"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render a CASIA-B-layout synthetic silhouette dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--subjects", sa.subjects, "Number of subjects");
  synth->add_option("--first-subject", sa.first_subject, "Id of the first subject");
  synth->add_option("--views", sa.views, "Comma-separated view angles in degrees");
  synth->add_option("--conditions", sa.conditions, "Comma-separated walking conditions (NM,BG,CL)");
  synth->add_option("--sequences", sa.sequences, "Sequences per subject, condition and view");
  synth->add_option("--frames", sa.frames, "Frames per sequence");
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_flag("--force", sa.force, "Replace a non-empty output directory");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints and a loss log");
  train->add_option("--data", ta.data, "Dataset root in CASIA-B layout")->required();
  train->add_option("--config", ta.config, "Run configuration file (defaults to the desk preset)");
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--steps", ta.steps, "Override train.total_steps");
  train->add_option("--seed", ta.seed, "Override train.seed");
  train->add_option("--subjects", ta.subjects, "Subject range A-B (default: the CASIA-B training split)");
  train->add_option("--set", ta.sets, "Configuration override key=value (repeatable)");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Rank-1 evaluation of a checkpoint");
  eval->add_option("--data", ea.data, "Dataset root in CASIA-B layout")->required();
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint path")->required();
  eval->add_option("--config", ea.config, "Run configuration (default: <ckpt>.cfg)");
  eval->add_option("--protocol", ea.protocol, "casia or flat");
  eval->add_flag("--exclude-identical-view", ea.exclude, "Ignore gallery entries at the probe's view");
  eval->add_option("--subjects", ea.subjects, "Subject range A-B (default: the CASIA-B test split for casia)");
  eval->add_option("--report", ea.report, "Write the rank-1 CSV here");
  eval->add_option("--embeddings", ea.embeddings, "Write the embeddings here");
  eval->add_option("--set", ea.sets, "Configuration override key=value (repeatable)");

  std::uint64_t gseed = 0;
  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  grad->add_option("--seed", gseed, "Random seed");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect-mask", "Dump the first edge mask of a sequence as PNG frames");
  inspect->add_option("--data", ia.data, "Dataset root in CASIA-B layout")->required();
  inspect->add_option("--ckpt", ia.ckpt, "Checkpoint path")->required();
  inspect->add_option("--config", ia.config, "Run configuration (default: <ckpt>.cfg)");
  inspect->add_option("--out", ia.out, "Output directory")->required();
  inspect->add_option("--sequence", ia.sequence, "Sequence index in directory order");
  inspect->add_option("--set", ia.sets, "Configuration override key=value (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*grad) return cmd_gradcheck(gseed);
    if (*inspect) return cmd_inspect_mask(ia);
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError, ValidationError
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const SamplerError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
