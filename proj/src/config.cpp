#include "prgcn/config.hpp"

#include <fstream>
#include <sstream>
#include <type_traits>

namespace prgcn {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::parallel_pm: return "parallel_pm";
    case FusionMode::parallel_pp: return "parallel_pp";
    case FusionMode::sequential_p: return "sequential_p";
    case FusionMode::sequential_pm: return "sequential_pm";
  }
  return "?";
}

FusionMode fusion_mode_from(const std::string& s) {
  if (s == "parallel_pm") return FusionMode::parallel_pm;
  if (s == "parallel_pp") return FusionMode::parallel_pp;
  if (s == "sequential_p") return FusionMode::sequential_p;
  if (s == "sequential_pm") return FusionMode::sequential_pm;
  throw std::invalid_argument("config: unknown fusion_mode '" + s +
                              "' (expected parallel_pm, parallel_pp, sequential_p, sequential_pm)");
}

void ModelConfig::validate() const {
  if (channel_semantics != "xy_conf" && channel_semantics != "xyz")
    throw std::invalid_argument("config: channel_semantics must be xy_conf or xyz, got '" + channel_semantics + "'");
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (frames < 6 || frames % 6 != 0)
    throw std::invalid_argument("config: frames (" + std::to_string(frames) +
                                ") must be a positive multiple of 6");
  if (persons < 1) throw std::invalid_argument("config: persons must be >= 1");
  if (prm_hidden < 1) throw std::invalid_argument("config: prm_hidden must be >= 1");
  if (gfm_width < 1) throw std::invalid_argument("config: gfm_width must be >= 1");
  if (tam_reduction < 1) throw std::invalid_argument("config: tam_reduction must be >= 1");
  if (enable_tam && fused_channels() % tam_reduction != 0)
    throw std::invalid_argument("config: fused channels (" + std::to_string(fused_channels()) +
                                ") not divisible by tam_reduction (" + std::to_string(tam_reduction) + ")");
}

void TrainConfig::validate() const {
  if (base_lr <= 0) throw std::invalid_argument("config: train.base_lr must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("config: train.momentum must be in [0,1)");
  if (decay_factor <= 0 || decay_factor > 1)
    throw std::invalid_argument("config: train.decay_factor must be in (0,1]");
  if (decay_period < 1) throw std::invalid_argument("config: train.decay_period must be >= 1");
  if (warm_period < 0) throw std::invalid_argument("config: train.warm_period must be >= 0");
  if (epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (augment.rotation_deg < 0 || augment.scale_delta < 0 || augment.translate < 0)
    throw std::invalid_argument("config: augment ranges must be nonnegative");
  if (augment.scale_delta >= 1) throw std::invalid_argument("config: train.augment.scale_delta must be < 1");
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
}

template <typename T>
void take(KeyValues& kv, const std::string& key, T& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  if constexpr (std::is_same_v<T, std::string>)
    out = it->second;
  else if constexpr (std::is_same_v<T, bool>)
    out = parse_bool(key, it->second);
  else if constexpr (std::is_floating_point_v<T>)
    out = static_cast<T>(parse_real(key, it->second));
  else
    out = static_cast<T>(parse_int(key, it->second));
  kv.erase(it);
}

}  // namespace

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: " + origin + ":" + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: " + origin + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("config: override '" + o + "' must be key=value");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
}

ModelConfig model_config_from(KeyValues& kv) {
  ModelConfig mc;
  take(kv, "topology", mc.topology);
  take(kv, "channel_semantics", mc.channel_semantics);
  take(kv, "num_classes", mc.num_classes);
  take(kv, "frames", mc.frames);
  take(kv, "persons", mc.persons);
  take(kv, "prm_hidden", mc.prm_hidden);
  take(kv, "gfm_width", mc.gfm_width);
  take(kv, "tam_reduction", mc.tam_reduction);
  take(kv, "enable_prm", mc.enable_prm);
  take(kv, "enable_tam", mc.enable_tam);
  take(kv, "init_seed", mc.init_seed);
  if (auto it = kv.find("fusion_mode"); it != kv.end()) {
    mc.fusion_mode = fusion_mode_from(it->second);
    kv.erase(it);
  }
  mc.validate();
  return mc;
}

TrainConfig train_config_from(KeyValues& kv) {
  TrainConfig tc;
  take(kv, "train.base_lr", tc.base_lr);
  take(kv, "train.momentum", tc.momentum);
  take(kv, "train.decay_factor", tc.decay_factor);
  take(kv, "train.decay_period", tc.decay_period);
  take(kv, "train.warm_period", tc.warm_period);
  take(kv, "train.epochs", tc.epochs);
  take(kv, "train.batch_size", tc.batch_size);
  take(kv, "train.seed", tc.seed);
  take(kv, "train.augment.rotation_deg", tc.augment.rotation_deg);
  take(kv, "train.augment.scale_delta", tc.augment.scale_delta);
  take(kv, "train.augment.translate", tc.augment.translate);
  tc.validate();
  return tc;
}

void reject_unknown_keys(const KeyValues& kv) {
  if (kv.empty()) return;
  std::string keys;
  for (const auto& [k, v] : kv) keys += (keys.empty() ? "" : ", ") + k;
  throw std::invalid_argument("config: unknown keys: " + keys);
}

std::string render_config(const ModelConfig& mc, const TrainConfig& tc) {
  std::ostringstream out;
  out << "topology = " << mc.topology << "\n"
      << "channel_semantics = " << mc.channel_semantics << "\n"
      << "num_classes = " << mc.num_classes << "\n"
      << "frames = " << mc.frames << "\n"
      << "persons = " << mc.persons << "\n"
      << "prm_hidden = " << mc.prm_hidden << "\n"
      << "gfm_width = " << mc.gfm_width << "\n"
      << "tam_reduction = " << mc.tam_reduction << "\n"
      << "enable_prm = " << (mc.enable_prm ? "true" : "false") << "\n"
      << "enable_tam = " << (mc.enable_tam ? "true" : "false") << "\n"
      << "fusion_mode = " << to_string(mc.fusion_mode) << "\n"
      << "init_seed = " << mc.init_seed << "\n"
      << "train.base_lr = " << tc.base_lr << "\n"
      << "train.momentum = " << tc.momentum << "\n"
      << "train.decay_factor = " << tc.decay_factor << "\n"
      << "train.decay_period = " << tc.decay_period << "\n"
      << "train.warm_period = " << tc.warm_period << "\n"
      << "train.epochs = " << tc.epochs << "\n"
      << "train.batch_size = " << tc.batch_size << "\n"
      << "train.seed = " << tc.seed << "\n"
      << "train.augment.rotation_deg = " << tc.augment.rotation_deg << "\n"
      << "train.augment.scale_delta = " << tc.augment.scale_delta << "\n"
      << "train.augment.translate = " << tc.augment.translate << "\n";
  return out.str();
}

}  // namespace prgcn
