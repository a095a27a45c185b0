#include "interrogate/gates.hpp"

#include <algorithm>
#include <cmath>

namespace interrogate {

namespace {
double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

GateBank::GateBank(int tasks, std::vector<int> site_widths, double init_logit)
    : tasks_(tasks), widths_(std::move(site_widths)) {
  max_width_ = widths_.empty()
                   ? 0
                   : *std::max_element(widths_.begin(), widths_.end());
  const int s = sites();
  alpha_ = Tensor::zeros({tasks_, s, max_width_}, /*requires_grad=*/true);
  validity_ = Tensor::zeros({s, max_width_});
  for (int i = 0; i < s; ++i)
    for (int c = 0; c < widths_[static_cast<size_t>(i)]; ++c) {
      validity_.data()[static_cast<size_t>(i * max_width_ + c)] = 1.0;
      for (int t = 0; t < tasks_; ++t)
        alpha_.data()[static_cast<size_t>((t * s + i) * max_width_ + c)] =
            init_logit;
    }
}

Tensor GateBank::mask(int task, int site) const {
  if (task < 0 || task >= tasks_ || site < 0 || site >= sites())
    throw ContractError("GateBank::mask: index out of range");
  const int w = width(site);
  Tensor row = slice(slice(alpha_, 0, task, task + 1), 1, site, site + 1);
  row = reshape(slice(row, 2, 0, w), {w});
  return ste_threshold(sigmoid(row), threshold());
}

bool GateBank::on(int task, int site, int channel) const {
  const double a =
      alpha_.data()[static_cast<size_t>((task * sites() + site) * max_width_ +
                                        channel)];
  return sigmoid_scalar(a) > threshold();
}

void GateBank::fill_logits(double value) {
  const int s = sites();
  for (int t = 0; t < tasks_; ++t)
    for (int i = 0; i < s; ++i)
      for (int c = 0; c < widths_[static_cast<size_t>(i)]; ++c)
        alpha_.data()[static_cast<size_t>((t * s + i) * max_width_ + c)] =
            value;
}

SharedMixer::SharedMixer(int tasks, std::vector<int> site_widths)
    : tasks_(tasks), widths_(std::move(site_widths)) {
  max_width_ = widths_.empty()
                   ? 0
                   : *std::max_element(widths_.begin(), widths_.end());
  beta_ = Tensor::zeros({sites(), max_width_, tasks_}, /*requires_grad=*/true);
}

Tensor SharedMixer::weights(int site) const {
  if (site < 0 || site >= sites())
    throw ContractError("SharedMixer::weights: site out of range");
  const int w = width(site);
  Tensor row = reshape(slice(slice(beta_, 0, site, site + 1), 1, 0, w),
                       {w, tasks_});
  return softmax(row, 1);
}

std::vector<double> SharedMixer::weights_frozen(int site) const {
  const int w = width(site);
  std::vector<double> out(static_cast<size_t>(w) * tasks_);
  for (int c = 0; c < w; ++c) {
    const double* row =
        beta_.data().data() + (static_cast<int64_t>(site) * max_width_ + c) *
                                  tasks_;
    double mx = row[0];
    for (int t = 1; t < tasks_; ++t) mx = std::max(mx, row[t]);
    double denom = 0.0;
    for (int t = 0; t < tasks_; ++t) {
      out[static_cast<size_t>(c * tasks_ + t)] = std::exp(row[t] - mx);
      denom += out[static_cast<size_t>(c * tasks_ + t)];
    }
    for (int t = 0; t < tasks_; ++t)
      out[static_cast<size_t>(c * tasks_ + t)] /= denom;
  }
  return out;
}

Tensor mix_task(const Tensor& mask, const Tensor& task_feat,
                const Tensor& shared_feat, int channel_axis) {
  return gate_mix(mask, task_feat, shared_feat, channel_axis);
}

Tensor mix_shared(const SharedMixer& mixer, int site,
                  const std::vector<Tensor>& task_feats, int channel_axis) {
  if (static_cast<int>(task_feats.size()) != mixer.tasks())
    throw ContractError("mix_shared: feature count != task count");
  Tensor w = mixer.weights(site);  // [C, T]
  Tensor out;
  for (int t = 0; t < mixer.tasks(); ++t) {
    Tensor col = reshape(slice(w, 1, t, t + 1), {mixer.width(site)});
    Tensor term = scale_axis(task_feats[static_cast<size_t>(t)], col,
                             channel_axis);
    out = t == 0 ? term : add(out, term);
  }
  return out;
}

Tensor sparsity_loss(const GateBank& bank, const SparsityConfig& cfg) {
  if (cfg.variant == SparsityConfig::Variant::kNone)
    throw ContractError("sparsity_loss: variant is none; caller must skip");
  const int s = bank.sites();
  const int t = bank.tasks();
  if (cfg.variant == SparsityConfig::Variant::kHinge &&
      static_cast<int>(cfg.tau.size()) != t)
    throw ContractError("sparsity_loss: hinge needs one tau per task");

  Tensor sig = sigmoid(bank.alpha());          // [T,S,Cmax]
  Tensor valid = mul(sig, bank.validity());    // padded entries zeroed
  Tensor site_sum = sum_axis(valid, 2);        // [T,S]
  std::vector<double> inv_w(static_cast<size_t>(s));
  for (int i = 0; i < s; ++i) inv_w[static_cast<size_t>(i)] = 1.0 / bank.width(i);
  Tensor site_mean = mul(site_sum, Tensor::from_data({s}, inv_w));
  Tensor task_mean = mul_scalar(sum_axis(site_mean, 1), 1.0 / s);  // [T]
  if (cfg.variant == SparsityConfig::Variant::kL1) return mean(task_mean);
  Tensor shifted = sub(task_mean, Tensor::from_data({t}, cfg.tau));
  return mean(max_with(shifted, 0.0));
}

GateReport gate_statistics(const GateBank& bank, const SharedMixer& mixer) {
  GateReport report;
  report.tasks.resize(static_cast<size_t>(bank.tasks()));
  for (int t = 0; t < bank.tasks(); ++t) {
    auto& stats = report.tasks[static_cast<size_t>(t)];
    stats.per_site.resize(static_cast<size_t>(bank.sites()), 0.0);
    int64_t on_total = 0, slots = 0;
    for (int s = 0; s < bank.sites(); ++s) {
      int on = 0;
      for (int c = 0; c < bank.width(s); ++c)
        if (bank.on(t, s, c)) ++on;
      stats.per_site[static_cast<size_t>(s)] =
          static_cast<double>(on) / bank.width(s);
      on_total += on;
      slots += bank.width(s);
    }
    stats.selection_ratio =
        slots > 0 ? static_cast<double>(on_total) / static_cast<double>(slots)
                  : 0.0;
  }
  // Contribution share: arg-max of the softmaxed beta per (site, channel);
  // softmax is monotone so the raw logits decide. Ties go to the lowest
  // task index.
  int64_t mixer_slots = 0;
  std::vector<int64_t> wins(static_cast<size_t>(bank.tasks()), 0);
  for (int s = 0; s < mixer.sites(); ++s)
    for (int c = 0; c < mixer.width(s); ++c) {
      const double* row =
          mixer.beta().data().data() +
          (static_cast<int64_t>(s) * mixer.max_width() + c) * mixer.tasks();
      int best = 0;
      for (int t = 1; t < mixer.tasks(); ++t)
        if (row[t] > row[best]) best = t;
      ++wins[static_cast<size_t>(best)];
      ++mixer_slots;
    }
  for (int t = 0; t < bank.tasks(); ++t)
    report.tasks[static_cast<size_t>(t)].shared_contribution =
        mixer_slots > 0 ? static_cast<double>(wins[static_cast<size_t>(t)]) /
                              static_cast<double>(mixer_slots)
                        : 0.0;
  return report;
}

}  // namespace interrogate
