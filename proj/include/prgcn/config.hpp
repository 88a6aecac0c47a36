#pragma once

#include "prgcn/tensor.hpp"

#include <map>
#include <string>
#include <vector>

// Flat key-value configuration shared by the model, the data pipeline, and
// the trainer. File format: one "key = value" per line, '#' comments.

namespace prgcn {

enum class FusionMode { parallel_pm, parallel_pp, sequential_p, sequential_pm };

inline bool is_parallel(FusionMode m) { return m == FusionMode::parallel_pm || m == FusionMode::parallel_pp; }

std::string to_string(FusionMode m);
FusionMode fusion_mode_from(const std::string& s);

struct ModelConfig {
  std::string topology = "kinetics18";  // preset name or edge-list file path
  std::string channel_semantics = "xy_conf";  // or "xyz"
  Index num_classes = 400;
  Index frames = 300;
  Index persons = 2;
  Index prm_hidden = 64;
  Index gfm_width = 64;
  Index tam_reduction = 4;
  bool enable_prm = true;
  bool enable_tam = true;
  FusionMode fusion_mode = FusionMode::parallel_pm;
  unsigned long long init_seed = 1;

  Index channels() const { return 3; }
  Index offset_channels() const { return channel_semantics == "xyz" ? 3 : 2; }
  Index fused_channels() const { return 4 * gfm_width; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct AugmentParams {
  double rotation_deg = 10.0;   // uniform in [-r, r]
  double scale_delta = 0.1;     // uniform scale in [1-d, 1+d]
  double translate = 0.25;      // uniform offset in [-t, t] per axis
};

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double decay_factor = 0.1;
  Index decay_period = 10;
  Index warm_period = 10;
  Index epochs = 50;
  Index batch_size = 16;
  unsigned long long seed = 1;
  AugmentParams augment;

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

// Parses "key = value" lines; later duplicates win.
KeyValues parse_config_text(const std::string& text, const std::string& origin);
KeyValues load_config_file(const std::string& path);

// Applies repeatable "key=value" CLI overrides on top of file contents.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides);

// Consumes recognized keys; any key left over afterwards is a config error.
ModelConfig model_config_from(KeyValues& kv);
TrainConfig train_config_from(KeyValues& kv);
void reject_unknown_keys(const KeyValues& kv);

std::string render_config(const ModelConfig& mc, const TrainConfig& tc);

}  // namespace prgcn
