#include "hdgl/config.hpp"

#include "hdgl/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hdgl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    fail(ErrorCode::Config, "'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorCode::Config, "'" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::Config, "'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

Regime parse_regime(const std::string& name) {
  if (name == "trans_sep") return Regime::TransSep;
  if (name == "trans_join") return Regime::TransJoin;
  if (name == "trans_scl") return Regime::TransScl;
  if (name == "induc") return Regime::Induc;
  fail(ErrorCode::Usage, "unknown regime '" + name + "' (expected trans_sep, trans_join, trans_scl or induc)");
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::TransSep: return "trans_sep";
    case Regime::TransJoin: return "trans_join";
    case Regime::TransScl: return "trans_scl";
    case Regime::Induc: return "induc";
  }
  return "?";
}

EncoderConfig TrainConfig::encoder(int n_rois) const {
  EncoderConfig e;
  e.n_rois = n_rois;
  e.window_length = window_length;
  e.embed_dim = embed_dim;
  e.attn_dim = attn_dim;
  e.ff_hidden = ff_hidden;
  e.layers = layers;
  e.encoder_layers = encoder_layers;
  e.pooling_ratio = pooling_ratio;
  e.use_gru = use_gru;
  e.use_sagpool = use_sagpool;
  e.use_transformer = use_transformer;
  e.positional_encoding = positional_encoding;
  return e;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorCode::Config, msg);
  };
  require(lr_initial > 0.0, "lr_initial must be positive");
  require(lr_max >= lr_initial, "lr_max must be at least lr_initial");
  require(!lr_floor || *lr_floor >= 0.0, "lr_floor must be nonnegative");
  require(warmup_fraction > 0.0 && warmup_fraction < 1.0, "warmup_fraction must lie in (0, 1)");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(epochs >= 1, "epochs must be at least 1");
  require(patience >= 1, "patience must be at least 1");
  require(folds >= 2, "folds must be at least 2");
  require(threads >= 0, "threads must be nonnegative");
  require(window_length >= 2, "window_length must be at least 2");
  require(window_stride >= 1, "window_stride must be at least 1");
  require(keep_fraction > 0.0 && keep_fraction <= 1.0, "keep_fraction must lie in (0, 1]");
  require(pooling_ratio > 0.0 && pooling_ratio < 1.0, "pooling_ratio must lie in (0, 1)");
  require(embed_dim >= 1 && attn_dim >= 1 && ff_hidden >= 1 && pop_dim >= 1,
          "dimensions must be positive");
  require(layers >= 1, "layers must be at least 1");
  require(encoder_layers >= 0, "encoder_layers must be nonnegative");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(age_band >= 0.0, "age_band must be nonnegative");
  require(sep_phase2_batch >= 1, "sep_phase2_batch must be at least 1");
  parse_phenotype_features(phenotype_features);
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string features;
  for (std::size_t i = 0; i < phenotype_features.size(); ++i) {
    if (i) features += ',';
    features += phenotype_features[i];
  }
  return {
      {"regime", to_string(regime)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"patience", std::to_string(patience)},
      {"lr_initial", format_double(lr_initial)},
      {"lr_max", format_double(lr_max)},
      {"lr_floor", lr_floor ? format_double(*lr_floor) : std::string()},
      {"warmup_fraction", format_double(warmup_fraction)},
      {"folds", std::to_string(folds)},
      {"seed", std::to_string(seed)},
      {"threads", std::to_string(threads)},
      {"window_length", std::to_string(window_length)},
      {"window_stride", std::to_string(window_stride)},
      {"window_count_plus_one", b(window_count_plus_one)},
      {"keep_fraction", format_double(keep_fraction)},
      {"pooling_ratio", format_double(pooling_ratio)},
      {"embed_dim", std::to_string(embed_dim)},
      {"attn_dim", std::to_string(attn_dim)},
      {"ff_hidden", std::to_string(ff_hidden)},
      {"layers", std::to_string(layers)},
      {"encoder_layers", std::to_string(encoder_layers)},
      {"positional_encoding", b(positional_encoding)},
      {"dropout", format_double(dropout)},
      {"pop_dim", std::to_string(pop_dim)},
      {"phenotype_features", features},
      {"age_band", format_double(age_band)},
      {"weighted_attention", b(weighted_attention)},
      {"sep_phase2_batch", std::to_string(sep_phase2_batch)},
      {"use_gru", b(use_gru)},
      {"use_sagpool", b(use_sagpool)},
      {"use_transformer", b(use_transformer)},
      {"use_population", b(use_population)},
  };
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto as_int = [&] { return static_cast<int>(parse_int(key, v)); };
  if (key == "regime") {
    regime = parse_regime(v);
  } else if (key == "batch_size") {
    batch_size = as_int();
  } else if (key == "epochs") {
    epochs = as_int();
  } else if (key == "patience") {
    patience = as_int();
  } else if (key == "lr_initial") {
    lr_initial = parse_double(key, v);
  } else if (key == "lr_max") {
    lr_max = parse_double(key, v);
  } else if (key == "lr_floor") {
    if (v.empty()) {
      lr_floor.reset();
    } else {
      lr_floor = parse_double(key, v);
    }
  } else if (key == "warmup_fraction") {
    warmup_fraction = parse_double(key, v);
  } else if (key == "folds") {
    folds = as_int();
  } else if (key == "seed") {
    const long long s = parse_int(key, v);
    if (s < 0) fail(ErrorCode::Config, "seed must be nonnegative");
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "threads") {
    threads = as_int();
  } else if (key == "window_length") {
    window_length = as_int();
  } else if (key == "window_stride") {
    window_stride = as_int();
  } else if (key == "window_count_plus_one") {
    window_count_plus_one = parse_bool(key, v);
  } else if (key == "keep_fraction") {
    keep_fraction = parse_double(key, v);
  } else if (key == "pooling_ratio") {
    pooling_ratio = parse_double(key, v);
  } else if (key == "embed_dim") {
    embed_dim = as_int();
  } else if (key == "attn_dim") {
    attn_dim = as_int();
  } else if (key == "ff_hidden") {
    ff_hidden = as_int();
  } else if (key == "layers") {
    layers = as_int();
  } else if (key == "encoder_layers") {
    encoder_layers = as_int();
  } else if (key == "positional_encoding") {
    positional_encoding = parse_bool(key, v);
  } else if (key == "dropout") {
    dropout = parse_double(key, v);
  } else if (key == "pop_dim") {
    pop_dim = as_int();
  } else if (key == "phenotype_features") {
    phenotype_features = split_list(v);
  } else if (key == "age_band") {
    age_band = parse_double(key, v);
  } else if (key == "weighted_attention") {
    weighted_attention = parse_bool(key, v);
  } else if (key == "sep_phase2_batch") {
    sep_phase2_batch = as_int();
  } else if (key == "use_gru") {
    use_gru = parse_bool(key, v);
  } else if (key == "use_sagpool") {
    use_sagpool = parse_bool(key, v);
  } else if (key == "use_transformer") {
    use_transformer = parse_bool(key, v);
  } else if (key == "use_population") {
    use_population = parse_bool(key, v);
  } else {
    fail(ErrorCode::Config, "unknown config key '" + key + "'");
  }
}

void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Config, origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Config) throw;
      fail(ErrorCode::Config, origin + ":" + std::to_string(lineno) + ": " +
                                  std::string(e.what()).substr(std::string("config error: ").size()));
    }
  }
}

void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_key_values()) out += k + "=" + v + "\n";
  return out;
}

double one_cycle_lr(int step, int total_steps, const TrainConfig& cfg) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    fail(ErrorCode::InvalidInput, "step " + std::to_string(step) + " outside [0, " +
                                      std::to_string(total_steps) + ")");
  }
  const int peak = static_cast<int>(std::floor(cfg.warmup_fraction * total_steps));
  if (step <= peak) {
    if (peak == 0) return cfg.lr_max;
    return cfg.lr_initial + (cfg.lr_max - cfg.lr_initial) * static_cast<double>(step) / peak;
  }
  const int last = total_steps - 1;
  return cfg.lr_max + (cfg.floor_lr() - cfg.lr_max) * static_cast<double>(step - peak) / (last - peak);
}

}  // namespace hdgl
