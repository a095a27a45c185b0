#include "interrogate/data.hpp"

#include <cmath>

#include "interrogate/rng.hpp"

namespace interrogate {

std::vector<TaskSpec> synthetic_task_specs() {
  TaskSpec quadrant{"quadrant", TaskSpec::Kind::kClassification, 4, 1,
                    TaskSpec::Loss::kCrossEntropy, 1.0,
                    TaskSpec::Metric::kAccuracy};
  TaskSpec mass{"mass", TaskSpec::Kind::kRegression, 0, 1, TaskSpec::Loss::kL1,
                1.0, TaskSpec::Metric::kL1Error};
  TaskSpec parity{"parity", TaskSpec::Kind::kClassification, 2, 1,
                  TaskSpec::Loss::kCrossEntropy, 1.0,
                  TaskSpec::Metric::kAccuracy};
  return {quadrant, mass, parity};
}

namespace {

struct Blob {
  double cx, cy, amp, width;
};

void render(std::vector<double>& img, int n, const std::vector<Blob>& blobs) {
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (const auto& b : blobs) {
        const double dx = x - b.cx, dy = y - b.cy;
        acc += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width *
                                                        b.width));
      }
      img[static_cast<size_t>(y * n + x)] = acc;
    }
}

void draw_sample(Rng& rng, double rho, int n, std::vector<double>& img,
                 int& quadrant, double& mass_target, int& parity) {
  // shared and per-task latent factors
  double zs[4];
  for (double& v : zs) v = rng.normal();
  double u[3][4];
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 4; ++i)
      u[t][i] = rho * zs[i] + (1.0 - rho) * rng.normal();

  // task 0: quadrant of the dominant blob
  quadrant = (u[0][0] > 0 ? 1 : 0) + 2 * (u[0][1] > 0 ? 1 : 0);
  const double qx = (quadrant & 1) ? 0.75 * n : 0.25 * n;
  const double qy = (quadrant & 2) ? 0.75 * n : 0.25 * n;
  Blob dominant{qx + 0.12 * n * std::tanh(u[0][2]),
                qy + 0.12 * n * std::tanh(u[0][3]), 0.0, 1.6};

  // task 1: total mass = dominant amplitude plus a fixed secondary budget,
  // so the count never leaks into the regression target
  dominant.amp = 2.0 + 0.5 * std::tanh(u[1][0]);
  const double budget = 0.9 + 0.3 * std::tanh(u[1][1]);
  const double mass = dominant.amp + budget;
  mass_target = (mass - 2.9) / 0.4;

  // task 2: blob count parity; secondaries split the budget evenly and
  // stay strictly below the dominant amplitude
  const int extras = 1 + (u[2][0] > 0 ? 1 : 0) + (u[2][1] > 0 ? 1 : 0);
  parity = (1 + extras) % 2;

  std::vector<Blob> blobs = {dominant};
  for (int e = 0; e < extras; ++e) {
    Blob b{0, 0, budget / extras, 1.1};
    for (int attempt = 0; attempt < 20; ++attempt) {
      b.cx = rng.uniform(1.5, n - 1.5);
      b.cy = rng.uniform(1.5, n - 1.5);
      bool ok = true;
      for (const auto& other : blobs) {
        const double d = std::hypot(b.cx - other.cx, b.cy - other.cy);
        if (d < 3.2) ok = false;
      }
      if (ok) break;
    }
    blobs.push_back(b);
  }
  render(img, n, blobs);
}

Dataset draw_many(Rng& rng, const SyntheticSpec& spec, int count) {
  const int n = spec.image_size;
  Dataset ds;
  ds.images = Tensor::zeros({count, 1, n, n});
  ds.labels.resize(3);
  ds.targets.resize(3);
  ds.labels[0].reserve(static_cast<size_t>(count));
  ds.targets[1].reserve(static_cast<size_t>(count));
  ds.labels[2].reserve(static_cast<size_t>(count));
  std::vector<double> img(static_cast<size_t>(n) * n);
  for (int i = 0; i < count; ++i) {
    int quadrant = 0, parity = 0;
    double mass = 0.0;
    draw_sample(rng, spec.rho, n, img, quadrant, mass, parity);
    std::copy(img.begin(), img.end(),
              ds.images.data().begin() + static_cast<int64_t>(i) * n * n);
    ds.labels[0].push_back(quadrant);
    ds.targets[1].push_back(mass);
    ds.labels[2].push_back(parity);
  }
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> generate_dataset(const SyntheticSpec& spec) {
  if (spec.train_size <= 0 || spec.test_size <= 0)
    throw ContractError("generate_dataset: sizes must be positive");
  if (spec.generator != "blobs-v1")
    throw ContractError("generate_dataset: unknown generator " +
                        spec.generator);
  Rng rng(spec.seed);
  Dataset train = draw_many(rng, spec, spec.train_size);
  Dataset test = draw_many(rng, spec, spec.test_size);
  return {std::move(train), std::move(test)};
}

Batch make_batch(const Dataset& ds, const std::vector<int>& idx,
                 const std::vector<TaskSpec>& specs) {
  const int n = ds.images.dim(2);
  const int b = static_cast<int>(idx.size());
  Batch batch;
  batch.x = Tensor::zeros({b, 1, n, n});
  for (int i = 0; i < b; ++i)
    std::copy_n(ds.images.data().begin() +
                    static_cast<int64_t>(idx[static_cast<size_t>(i)]) * n * n,
                static_cast<int64_t>(n) * n,
                batch.x.data().begin() + static_cast<int64_t>(i) * n * n);
  batch.labels.resize(specs.size());
  batch.targets.resize(specs.size());
  for (size_t t = 0; t < specs.size(); ++t) {
    if (specs[t].kind == TaskSpec::Kind::kClassification) {
      for (int i : idx)
        batch.labels[t].push_back(ds.labels[t][static_cast<size_t>(i)]);
    } else {
      std::vector<double> vals;
      for (int i : idx)
        vals.push_back(ds.targets[t][static_cast<size_t>(i)]);
      batch.targets[t] = Tensor::from_data({b, 1}, std::move(vals));
    }
  }
  return batch;
}

}  // namespace interrogate
