#pragma once

#include "hdgl/brain_encoder.hpp"
#include "hdgl/dynfc.hpp"
#include "hdgl/population_graph.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hdgl {

enum class Regime { TransSep, TransJoin, TransScl, Induc };

/// Throws Usage on unknown names.
Regime parse_regime(const std::string& name);
const char* to_string(Regime r);

struct TrainConfig {
  Regime regime = Regime::TransJoin;
  int batch_size = 16;
  int epochs = 100;
  int patience = 20;
  double lr_initial = 5e-4;
  double lr_max = 9e-4;
  /// Decay target of the one-cycle schedule; unset means lr_initial.
  std::optional<double> lr_floor;
  double warmup_fraction = 0.2;
  int folds = 5;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: HDGL_THREADS or the OpenMP default

  // Level 1.
  int window_length = 20;
  int window_stride = 5;
  bool window_count_plus_one = false;
  double keep_fraction = 0.3;
  double pooling_ratio = 0.8;
  int embed_dim = 16;
  int attn_dim = 16;
  int ff_hidden = 16;
  int layers = 2;
  int encoder_layers = 2;
  bool positional_encoding = false;
  double dropout = 0.5;

  // Level 2.
  int pop_dim = 16;
  std::vector<std::string> phenotype_features{"sex", "site", "age"};
  double age_band = 2.0;
  bool weighted_attention = false;
  /// Training nodes per classifier step in the second trans_sep phase.
  int sep_phase2_batch = 16;

  // Ablation switches.
  bool use_gru = true;
  bool use_sagpool = true;
  bool use_transformer = true;
  bool use_population = true;

  WindowSpec window() const { return {window_length, window_stride, window_count_plus_one}; }
  EncoderConfig encoder(int n_rois) const;
  PopulationGraphConfig population() const { return {phenotype_features, age_band}; }
  double floor_lr() const { return lr_floor ? *lr_floor : lr_initial; }

  /// Throws Config on any violated invariant.
  void validate() const;

  /// Every field as key=value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Throws Config on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
};

/// Flat key=value text; '#' starts a comment. Applies on top of cfg.
void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path);
void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin = "config");
std::string config_text(const TrainConfig& cfg);

/// Piecewise-linear one-cycle schedule: lr_initial at step 0, lr_max at
/// floor(warmup_fraction * total), floor_lr() at the last step.
double one_cycle_lr(int step, int total_steps, const TrainConfig& cfg);

}  // namespace hdgl
