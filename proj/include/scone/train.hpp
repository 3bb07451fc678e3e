// Training loop: AdamW with a cosine learning-rate schedule, plus the
// finite-difference gradient checker that validates the analytic backward
// pass end to end.
#pragma once

#include <set>

#include "scone/model.hpp"

namespace scone {

struct TrainOptions {
  std::uint64_t steps = 0;
  std::uint32_t batch_size = 32;
  double peak_lr = 3e-4;
  double final_lr_fraction = 0.1;  // cosine decays to this fraction of peak
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // Divergence guard: abort after this many consecutive steps with loss
  // above 10x the first step's loss.
  std::uint32_t divergence_patience = 100;
};

template <typename Scalar>
struct OptimizerState {
  SconeModel<Scalar> m1, m2;  // first/second moments, model-shaped
  std::uint64_t step = 0;
  double peak_lr, final_lr_fraction, weight_decay, beta1, beta2, eps;
  std::uint64_t total_steps;  // cosine horizon

  static OptimizerState make(const SconeModel<Scalar>& model, const TrainOptions& o) {
    OptimizerState s{zeros_like(model), zeros_like(model), 0,          o.peak_lr,
                     o.final_lr_fraction, o.weight_decay,  o.beta1,    o.beta2,
                     o.eps,              o.steps};
    return s;
  }

  double learning_rate() const {
    if (total_steps == 0) return peak_lr;
    double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    double floor_lr = peak_lr * final_lr_fraction;
    return floor_lr + (peak_lr - floor_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
  }
};

// One AdamW step. Decoupled weight decay applies to weight matrices only;
// biases and norm parameters (single-row tensors) are exempt.
template <typename Scalar>
void adamw_step(SconeModel<Scalar>& model, const SconeModel<Scalar>& grads,
                OptimizerState<Scalar>& opt) {
  double lr = opt.learning_rate();
  opt.step++;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));

  auto params = param_list(model);
  auto gs = param_list(const_cast<SconeModel<Scalar>&>(grads));
  auto m1s = param_list(opt.m1);
  auto m2s = param_list(opt.m2);
  require(params.size() == gs.size() && params.size() == m1s.size(), "adamw_step: shape drift");

  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat<Scalar>& p = *params[t];
    const Mat<Scalar>& g = *gs[t];
    Mat<Scalar>& m1 = *m1s[t];
    Mat<Scalar>& m2 = *m2s[t];
    const bool decay = p.rows() > 1;  // matrices yes, 1 x n vectors no
    m1 = (m1.array() * static_cast<Scalar>(opt.beta1) +
          g.array() * static_cast<Scalar>(1.0 - opt.beta1))
             .matrix();
    m2 = (m2.array() * static_cast<Scalar>(opt.beta2) +
          g.array().square() * static_cast<Scalar>(1.0 - opt.beta2))
             .matrix();
    auto mhat = (m1.array() / static_cast<Scalar>(bc1)).eval();
    auto vhat = (m2.array() / static_cast<Scalar>(bc2)).eval();
    p.array() -= static_cast<Scalar>(lr) * (mhat / (vhat.sqrt() + static_cast<Scalar>(opt.eps)));
    if (decay && opt.weight_decay != 0.0)
      p.array() -= static_cast<Scalar>(lr * opt.weight_decay) * p.array();
  }
}

struct TrainResult {
  std::vector<double> loss_trace;  // mean cross-entropy per step, nats
};

// Trains in place. Deterministic given (model weights, data, options.seed):
// batches are epoch-shuffled index slices, single-threaded accumulation.
// Tags must be precomputed; no matching happens inside the loop.
template <typename Scalar>
TrainResult train(SconeModel<Scalar>& model, std::span<const TokenSequence> seqs,
                  std::span<const MatchTags> tags, const TrainOptions& options) {
  require(seqs.size() == tags.size(), "train: tags/sequences mismatch");
  require(options.batch_size >= 1, "train: batch_size must be >= 1");
  TrainResult result;
  if (options.steps == 0) return result;  // model unchanged, bit for bit
  require(!seqs.empty(), "train: empty dataset");

  OptimizerState<Scalar> opt = OptimizerState<Scalar>::make(model, options);
  Rng shuffle_rng(options.seed);
  std::vector<std::uint32_t> order(seqs.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, shuffle_rng);
  std::size_t cursor = 0;

  SconeModel<Scalar> grads = zeros_like(model);
  double initial_loss = 0;
  std::uint32_t high_loss_streak = 0;

  std::vector<TokenSequence> batch_seqs(options.batch_size);
  std::vector<MatchTags> batch_tags(options.batch_size);
  for (std::uint64_t step = 0; step < options.steps; ++step) {
    for (std::uint32_t b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle(order, shuffle_rng);
        cursor = 0;
      }
      std::uint32_t idx = order[cursor++];
      batch_seqs[b] = seqs[idx];
      batch_tags[b] = tags[idx];
    }

    for_each_param(grads, [](const std::string&, Mat<Scalar>& g) { g.setZero(); });
    auto stats = lm_loss_and_grad(model, std::span<const TokenSequence>(batch_seqs),
                                  std::span<const MatchTags>(batch_tags), grads,
                                  static_cast<std::int64_t>(step));
    double loss = stats.mean();
    result.loss_trace.push_back(loss);

    if (step == 0) initial_loss = loss;
    if (loss > 10.0 * initial_loss) {
      if (++high_loss_streak >= options.divergence_patience)
        throw Error("training diverged: loss " + std::to_string(loss) + " > 10x initial " +
                    std::to_string(initial_loss) + " for " +
                    std::to_string(high_loss_streak) + " consecutive steps (step " +
                    std::to_string(step) + ")");
    } else {
      high_loss_streak = 0;
    }

    adamw_step(model, grads, opt);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check: central differences against the analytic backward pass.

struct GradCheckReport {
  struct Group {
    std::string name;
    double max_rel_err = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
  };
  std::vector<Group> groups;
  double max_rel_err = 0;
  std::string worst_group;
  double tolerance = 0;
  bool passed = false;
  std::uint64_t parameters = 0;
};

// Relative error guarded against vanishing gradients:
//   err = |a - n| / max(|a|, |n|, 1e-6).
inline double guarded_rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Builds a small fp64 model plus a batch whose tags exercise 2-gram and
// 3-gram matches, then compares every analytic gradient entry with a central
// difference of the loss (step 1e-5).
inline GradCheckReport grad_check(const ModelConfig& config, double tolerance,
                                  std::uint64_t seed = 17, std::uint64_t fgram_count = 4) {
  ModelConfig cfg = config;
  cfg.precision = Dtype::f64;
  cfg.validate();
  require(cfg.has_fgram_stack() || fgram_count == 0,
          "grad_check: fgram_count > 0 needs an f-gram stack");

  SconeModel<double> model = init_model<double>(cfg, seed);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.parameters = param_count(model);
  require(report.parameters <= 100000, "grad_check: model too large (> 1e5 parameters)");

  // Synthetic vocabulary: fgram_count keys alternating lengths 2 and 3.
  FGramVocabulary vocab;
  vocab.n_max = cfg.fgram_n_max;
  Rng rng(seed + 1);
  std::set<NGramKey> seen;
  while (vocab.entries.size() < fgram_count) {
    std::uint32_t len = 2 + (vocab.entries.size() % (cfg.fgram_n_max - 1));
    NGramKey key;
    for (std::uint32_t i = 0; i < len; ++i)
      key.push_back(static_cast<TokenId>(rng.below(cfg.vocab_size)));
    if (seen.insert(key).second) vocab.entries.push_back({key, 1});
  }
  FGramIndex index(vocab);

  // Batch: sequences stitched from the keys so that matches actually occur,
  // padded with random tokens, at the model's full context length.
  std::vector<TokenSequence> seqs;
  std::uint32_t m = cfg.max_seq_len;
  for (int s = 0; s < 2; ++s) {
    TokenSequence seq;
    while (seq.size() < m) {
      if (!vocab.entries.empty() && rng.below(2) == 0) {
        const auto& key = vocab.entries[rng.below(vocab.entries.size())].key;
        for (TokenId t : key) {
          if (seq.size() < m) seq.tokens.push_back(t);
        }
      } else {
        seq.tokens.push_back(static_cast<TokenId>(rng.below(cfg.vocab_size)));
      }
    }
    seqs.push_back(std::move(seq));
  }
  std::vector<MatchTags> tags;
  for (const auto& s : seqs) tags.push_back(tag_sequence(index, s));

  SconeModel<double> grads = zeros_like(model);
  lm_loss_and_grad(model, std::span<const TokenSequence>(seqs),
                   std::span<const MatchTags>(tags), grads);

  auto loss_at = [&]() {
    return lm_loss(model, std::span<const TokenSequence>(seqs),
                   std::span<const MatchTags>(tags))
        .mean();
  };

  const double h = 1e-5;
  auto params = param_list(model);
  auto gs = param_list(grads);
  std::vector<std::string> names;
  for_each_param(model, [&](const std::string& n, Mat<double>&) { names.push_back(n); });

  for (std::size_t t = 0; t < params.size(); ++t) {
    GradCheckReport::Group group;
    group.name = names[t];
    Mat<double>& p = *params[t];
    const Mat<double>& g = *gs[t];
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        double saved = p(i, j);
        p(i, j) = saved + h;
        double up = loss_at();
        p(i, j) = saved - h;
        double down = loss_at();
        p(i, j) = saved;
        double numeric = (up - down) / (2 * h);
        double err = guarded_rel_err(g(i, j), numeric);
        if (err > group.max_rel_err) {
          group.max_rel_err = err;
          group.worst_analytic = g(i, j);
          group.worst_numeric = numeric;
        }
      }
    }
    if (group.max_rel_err > report.max_rel_err) {
      report.max_rel_err = group.max_rel_err;
      report.worst_group = group.name;
    }
    report.groups.push_back(std::move(group));
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

}  // namespace scone
