#include "gaitasms/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace gaitasms {

RunConfig paper_config() {
  RunConfig c;
  c.model = ModelConfig{};
  c.train = TrainConfig{};
  return c;
}

RunConfig desk_config() {
  RunConfig c;
  c.model.input = FrameSize{32, 22};
  c.model.channels = {4, 8, 16, 16};
  c.model.embed_dim = 64;
  c.train.lr = 1e-3;
  c.train.lr_after_drop = 1e-4;
  c.train.total_steps = 2000;
  c.train.lr_drop_step = 1750;
  c.train.sampler = SamplerConfig{4, 4, 30};
  c.train.checkpoint_every = 500;
  c.train.log_every = 10;
  return c;
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, const std::string& want) {
  throw ConfigError("config: " + std::string(key) + " = '" + std::string(value) + "' is not " + want);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  const std::string s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(out)) bad(key, v, "a finite number");
  return out;
}

long long to_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const std::string s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size()) bad(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const std::string s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size()) bad(key, v, "an unsigned integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  const std::string s = lower(trim(v));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(key, v, "a boolean");
}

std::vector<long long> to_ints(std::string_view key, std::string_view v, std::size_t count) {
  std::vector<long long> out;
  std::string s(v);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, item));
  if (out.size() != count) bad(key, v, "a list of " + std::to_string(count) + " integers");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Entry {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto real = [&](std::string key, auto member) {
      t.push_back({key, [key, member](RunConfig& c, std::string_view v) { member(c) = to_double(key, v); },
                   [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }});
    };
    auto integer = [&](std::string key, auto member) {
      t.push_back({key, [key, member](RunConfig& c, std::string_view v) { member(c) = static_cast<Index>(to_int(key, v)); },
                   [member](const RunConfig& c) { return fmt_int(member(const_cast<RunConfig&>(c))); }});
    };
    auto flag = [&](std::string key, auto member) {
      t.push_back({key, [key, member](RunConfig& c, std::string_view v) { member(c) = to_bool(key, v); },
                   [member](const RunConfig& c) { return fmt_bool(member(const_cast<RunConfig&>(c))); }});
    };
    auto seed = [&](std::string key, auto member) {
      t.push_back({key, [key, member](RunConfig& c, std::string_view v) { member(c) = to_u64(key, v); },
                   [member](const RunConfig& c) { return fmt_int(member(const_cast<RunConfig&>(c))); }});
    };

    integer("model.input_height", [](RunConfig& c) -> Index& { return c.model.input.height; });
    integer("model.input_width", [](RunConfig& c) -> Index& { return c.model.input.width; });
    t.push_back({"model.channels",
                 [](RunConfig& c, std::string_view v) {
                   auto xs = to_ints("model.channels", v, 4);
                   for (std::size_t i = 0; i < 4; ++i) c.model.channels[i] = static_cast<Index>(xs[i]);
                 },
                 [](const RunConfig& c) {
                   return std::to_string(c.model.channels[0]) + "," + std::to_string(c.model.channels[1]) + "," +
                          std::to_string(c.model.channels[2]) + "," + std::to_string(c.model.channels[3]);
                 }});
    real("model.threshold", [](RunConfig& c) -> double& { return c.model.threshold; });
    t.push_back({"model.branch_activation",
                 [](RunConfig& c, std::string_view v) {
                   const std::string s = lower(trim(v));
                   if (s == "none") c.model.activation = BranchActivation::None;
                   else if (s == "leaky_relu") c.model.activation = BranchActivation::LeakyRelu;
                   else bad("model.branch_activation", v, "none or leaky_relu");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.model.activation == BranchActivation::None ? "none" : "leaky_relu");
                 }});
    real("model.leaky_slope", [](RunConfig& c) -> double& { return c.model.leaky_slope; });
    integer("model.kernel", [](RunConfig& c) -> Index& { return c.model.kernel; });
    t.push_back({"model.dilations",
                 [](RunConfig& c, std::string_view v) {
                   auto xs = to_ints("model.dilations", v, 2);
                   c.model.dilation1 = static_cast<Index>(xs[0]);
                   c.model.dilation2 = static_cast<Index>(xs[1]);
                 },
                 [](const RunConfig& c) {
                   return std::to_string(c.model.dilation1) + "," + std::to_string(c.model.dilation2);
                 }});
    integer("model.temporal_kernel", [](RunConfig& c) -> Index& { return c.model.temporal_kernel; });
    real("model.p", [](RunConfig& c) -> double& { return c.model.p; });
    integer("model.embed_dim", [](RunConfig& c) -> Index& { return c.model.embed_dim; });
    integer("model.class_count", [](RunConfig& c) -> Index& { return c.model.class_count; });

    real("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
    integer("train.lr_drop_step", [](RunConfig& c) -> Index& { return c.train.lr_drop_step; });
    real("train.lr_after_drop", [](RunConfig& c) -> double& { return c.train.lr_after_drop; });
    integer("train.total_steps", [](RunConfig& c) -> Index& { return c.train.total_steps; });
    real("train.adam_beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    real("train.adam_beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    real("train.adam_epsilon", [](RunConfig& c) -> double& { return c.train.adam.epsilon; });
    real("train.margin", [](RunConfig& c) -> double& { return c.train.triplet.margin; });
    t.push_back({"train.triplet_reduction",
                 [](RunConfig& c, std::string_view v) {
                   const std::string s = lower(trim(v));
                   if (s == "mean_nonzero") c.train.triplet.reduction = TripletReduction::MeanNonZero;
                   else if (s == "mean_all") c.train.triplet.reduction = TripletReduction::MeanAll;
                   else bad("train.triplet_reduction", v, "mean_nonzero or mean_all");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.triplet.reduction == TripletReduction::MeanAll ? "mean_all" : "mean_nonzero");
                 }});
    flag("train.cross_entropy", [](RunConfig& c) -> bool& { return c.train.use_cross_entropy; });
    real("train.erasing_rate", [](RunConfig& c) -> double& { return c.train.erasing_rate; });
    seed("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    integer("train.checkpoint_every", [](RunConfig& c) -> Index& { return c.train.checkpoint_every; });
    integer("train.log_every", [](RunConfig& c) -> Index& { return c.train.log_every; });

    integer("sampler.subjects", [](RunConfig& c) -> Index& { return c.train.sampler.subjects; });
    integer("sampler.per_subject", [](RunConfig& c) -> Index& { return c.train.sampler.per_subject; });
    integer("sampler.frames", [](RunConfig& c) -> Index& { return c.train.sampler.frames; });

    flag("mask.enabled", [](RunConfig& c) -> bool& { return c.train.use_mask; });
    real("mask.rate", [](RunConfig& c) -> double& { return c.train.mask.mask_rate; });
    real("mask.region_height_fraction", [](RunConfig& c) -> double& { return c.train.mask.region_height_fraction; });
    real("mask.region_width_fraction", [](RunConfig& c) -> double& { return c.train.mask.region_width_fraction; });
    seed("mask.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.mask.seed; });
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const std::string k = lower(trim(key));
  for (const auto& e : entries())
    if (e.key == k) {
      e.set(cfg, value);
      return;
    }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("config: override '" + std::string(assignment) + "' is not key=value");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(origin + ":" + std::to_string(number) + ": malformed section header");
      section = lower(trim(std::string_view(s).substr(1, s.size() - 2)));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    if (section.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": key outside any [section]");
    try {
      apply_setting(cfg, section + "." + trim(std::string_view(s).substr(0, eq)), std::string_view(s).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

std::string config_text(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.key.find('.');
    const std::string sec = e.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << e.key.substr(dot + 1) << " = " << e.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace gaitasms
