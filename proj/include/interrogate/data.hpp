#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "interrogate/model.hpp"

namespace interrogate {

// Deterministic blob-image taskset. Each sample mixes a shared latent with
// per-task latents (weight rho vs 1-rho); the image is a sum of Gaussian
// blobs carrying all the task-relevant structure.
struct SyntheticSpec {
  std::string generator = "blobs-v1";
  int train_size = 2000;
  int test_size = 500;
  double rho = 0.5;
  uint64_t seed = 1;
  int image_size = 16;
};

struct Dataset {
  Tensor images;  // [N,1,H,W]
  std::vector<std::vector<int>> labels;      // per task; empty for regression
  std::vector<std::vector<double>> targets;  // per task; empty for classes
  int size() const { return images.defined() ? images.dim(0) : 0; }
};

// Tasks carried by the generator: dominant-blob quadrant (4-way), total
// blob mass (regression), blob-count parity (2-way).
std::vector<TaskSpec> synthetic_task_specs();

// Draws train then test from one seeded stream; identical spec gives
// byte-identical datasets.
std::pair<Dataset, Dataset> generate_dataset(const SyntheticSpec& spec);

Batch make_batch(const Dataset& ds, const std::vector<int>& idx,
                 const std::vector<TaskSpec>& specs);

}  // namespace interrogate
