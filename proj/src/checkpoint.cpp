#include "gaitasms/train.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace gaitasms {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'G', 'A', 'S', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::string rng_text(const TrainingState& s) {
  std::ostringstream os;
  os << s.sample_rng << '\n' << s.mask_rng;
  return os.str();
}

}  // namespace

Checkpoint make_checkpoint(const TrainingState& state) {
  Checkpoint c;
  c.step = static_cast<std::uint64_t>(state.step);
  c.rng_state = rng_text(state);
  for (const auto& e : state.params.entries()) c.tensors.push_back(NamedTensor<float>{e.name, e.value, e.trainable});
  for (const auto& e : state.adam_m.entries()) c.tensors.push_back(NamedTensor<float>{"adam.m/" + e.name, e.value, false});
  for (const auto& e : state.adam_v.entries()) c.tensors.push_back(NamedTensor<float>{"adam.v/" + e.name, e.value, false});
  return c;
}

void restore_checkpoint(TrainingState& state, const Checkpoint& ckpt) {
  auto target = [&](const std::string& name) -> Tensor<float>& {
    if (name.rfind("adam.m/", 0) == 0) return state.adam_m.at(name.substr(7));
    if (name.rfind("adam.v/", 0) == 0) return state.adam_v.at(name.substr(7));
    return state.params.at(name);
  };
  // Validate everything before touching the state.
  std::set<std::string> seen;
  for (const auto& t : ckpt.tensors) {
    Tensor<float>* dst = nullptr;
    try {
      dst = &target(t.name);
    } catch (const ConfigError&) {
      throw CheckpointError("checkpoint tensor " + t.name + " does not belong to this model configuration");
    }
    if (dst->shape() != t.value.shape())
      throw CheckpointError("checkpoint tensor " + t.name + " has shape " + shape_string(t.value.shape()) +
                            ", model expects " + shape_string(dst->shape()));
    if (!seen.insert(t.name).second) throw CheckpointError("checkpoint tensor " + t.name + " appears twice");
  }
  const std::size_t expected = state.params.size() + state.adam_m.size() + state.adam_v.size();
  if (seen.size() != expected)
    throw CheckpointError("checkpoint holds " + std::to_string(seen.size()) + " tensors, model expects " +
                          std::to_string(expected));
  std::mt19937_64 sample, mask;
  std::istringstream is(ckpt.rng_state);
  is >> sample >> mask;
  if (!is) throw CheckpointError("checkpoint rng state is malformed");

  for (const auto& t : ckpt.tensors) target(t.name) = t.value;
  state.step = static_cast<Index>(ckpt.step);
  state.sample_rng = sample;
  state.mask_rng = mask;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(Checkpoint::version);
  w.u64(ckpt.step);
  w.str(ckpt.rng_state);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (Index e : t.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (Index i = 0; i < t.value.size(); ++i) w.f32(t.value[i]);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic))
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::version)
    throw CheckpointError("incompatible checkpoint version " + std::to_string(version) + " (this build reads " +
                          std::to_string(Checkpoint::version) + ")");
  Checkpoint c;
  c.step = r.u64("step");
  c.rng_state = r.str("rng state");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor<float> t;
    t.name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw CheckpointError("checkpoint tensor " + t.name + " has invalid rank");
    Shape shape;
    std::uint64_t size = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<Index>(r.u32("tensor extent")));
      size *= static_cast<std::uint64_t>(shape.back());
    }
    if (size == 0) throw CheckpointError("checkpoint tensor " + t.name + " is empty");
    r.need(static_cast<std::size_t>(size) * 4, "tensor data");
    t.value = Tensor<float>::uninitialized(shape);
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] = r.f32("tensor data");
    t.trainable = t.name.rfind("adam.", 0) != 0 && t.name.find("running_") == std::string::npos;
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const fs::path& path, const TrainingState& state) {
  const std::string bytes = serialize_checkpoint(make_checkpoint(state));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace gaitasms
