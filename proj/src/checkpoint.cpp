#include "hdgl/checkpoint.hpp"

#include "hdgl/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace hdgl {

namespace {

constexpr const char* kMagic = "HDGL1";

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') fail(ErrorCode::Checkpoint, "bad number '" + s + "' in " + where);
  return v;
}

std::vector<std::string> words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

Checkpoint make_checkpoint(HdglModel& model, std::uint64_t seed, const FoldSplit& split,
                           const Dataset& data) {
  Checkpoint c;
  c.config = model.config();
  c.n_rois = model.n_rois();
  c.seed = seed;
  for (int i : split.train) c.train_ids.push_back(data.phenotypes[static_cast<std::size_t>(i)].subject_id);
  for (int i : split.test) c.test_ids.push_back(data.phenotypes[static_cast<std::size_t>(i)].subject_id);
  for (Parameter* p : model.parameters()) c.parameters[p->name] = p->value;
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << kMagic << "\n";
  out << "n_rois " << c.n_rois << "\n";
  out << "seed " << c.seed << "\n";
  out << "config\n" << config_text(c.config) << "end_config\n";
  out << "train";
  for (const auto& id : c.train_ids) out << ' ' << id;
  out << "\ntest";
  for (const auto& id : c.test_ids) out << ' ' << id;
  out << "\nparams " << c.parameters.size() << "\n";
  for (const auto& [name, m] : c.parameters) {
    out << "param " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << hex(m(i, j));
      out << "\n";
    }
  }
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line) || line != kMagic) fail(ErrorCode::Checkpoint, where + " is not an HDGL1 checkpoint");
  Checkpoint c;
  auto expect = [&](const std::string& key) {
    if (!std::getline(in, line)) fail(ErrorCode::Checkpoint, where + ": truncated before '" + key + "'");
    auto w = words(line);
    if (w.empty() || w.front() != key) fail(ErrorCode::Checkpoint, where + ": expected '" + key + "'");
    w.erase(w.begin());
    return w;
  };
  auto w = expect("n_rois");
  if (w.size() != 1) fail(ErrorCode::Checkpoint, where + ": malformed n_rois");
  c.n_rois = std::stoi(w[0]);
  w = expect("seed");
  if (w.size() != 1) fail(ErrorCode::Checkpoint, where + ": malformed seed");
  c.seed = std::stoull(w[0]);
  expect("config");
  std::string cfg_text;
  while (std::getline(in, line) && line != "end_config") cfg_text += line + "\n";
  if (line != "end_config") fail(ErrorCode::Checkpoint, where + ": unterminated config block");
  apply_config_text(c.config, cfg_text, where);
  c.train_ids = expect("train");
  c.test_ids = expect("test");
  w = expect("params");
  if (w.size() != 1) fail(ErrorCode::Checkpoint, where + ": malformed params count");
  const int count = std::stoi(w[0]);
  for (int k = 0; k < count; ++k) {
    w = expect("param");
    if (w.size() != 3) fail(ErrorCode::Checkpoint, where + ": malformed param header");
    const int rows = std::stoi(w[1]), cols = std::stoi(w[2]);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      if (!std::getline(in, line)) fail(ErrorCode::Checkpoint, where + ": truncated parameter " + w[0]);
      const auto vals = words(line);
      if (static_cast<int>(vals.size()) != cols) fail(ErrorCode::Checkpoint, where + ": wrong width for " + w[0]);
      for (int j = 0; j < cols; ++j) m(i, j) = parse_hex(vals[static_cast<std::size_t>(j)], where);
    }
    c.parameters[w[0]] = std::move(m);
  }
  return c;
}

std::unique_ptr<HdglModel> restore_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<HdglModel>(ckpt.config, ckpt.n_rois, ckpt.seed);
  std::size_t loaded = 0;
  for (Parameter* p : model->parameters()) {
    auto it = ckpt.parameters.find(p->name);
    if (it == ckpt.parameters.end()) fail(ErrorCode::Checkpoint, "checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      fail(ErrorCode::Checkpoint, "parameter " + p->name + " has a different shape");
    }
    p->value = it->second;
    ++loaded;
  }
  if (loaded != ckpt.parameters.size()) fail(ErrorCode::Checkpoint, "checkpoint holds unknown parameters");
  return model;
}

FoldSplit resolve_split(const Checkpoint& ckpt, const Dataset& data) {
  if (data.size() > 0 && data.series.front().n_rois() != ckpt.n_rois) {
    fail(ErrorCode::Checkpoint, "checkpoint expects " + std::to_string(ckpt.n_rois) +
                                    " ROIs, data has " + std::to_string(data.series.front().n_rois()));
  }
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < data.size(); ++i) index[data.phenotypes[i].subject_id] = static_cast<int>(i);
  FoldSplit split;
  auto map = [&](const std::vector<std::string>& ids, std::vector<int>& out) {
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) fail(ErrorCode::Checkpoint, "subject '" + id + "' of the stored split is missing");
      out.push_back(it->second);
    }
  };
  map(ckpt.train_ids, split.train);
  map(ckpt.test_ids, split.test);
  return split;
}

}  // namespace hdgl
