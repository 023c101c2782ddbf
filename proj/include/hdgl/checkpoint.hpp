#pragma once

#include "hdgl/config.hpp"
#include "hdgl/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace hdgl {

/// Text container opening with the line `HDGL1`. Values are stored as
/// hexadecimal floats so a reload is bit-exact.
struct Checkpoint {
  TrainConfig config;
  int n_rois = 0;
  std::uint64_t seed = 0;  // fold seed the model was initialized from
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::map<std::string, Mat> parameters;
};

Checkpoint make_checkpoint(HdglModel& model, std::uint64_t seed, const FoldSplit& split,
                           const Dataset& data);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds a model and loads every parameter. Throws Checkpoint when names or
/// shapes disagree.
std::unique_ptr<HdglModel> restore_model(const Checkpoint& ckpt);

/// Maps the stored split ids onto data. Throws Checkpoint when data lacks
/// any of them or has a different ROI count.
FoldSplit resolve_split(const Checkpoint& ckpt, const Dataset& data);

}  // namespace hdgl
