#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdparse/evaluation.hpp"
#include "sdparse/scorer.hpp"

namespace sdparse {

/// Cross-entropy of the final aggregated field against the gold cells:
///   sum over non-clamped (i, j) of  logsumexp(-F[i,j,:]) - (-F[i,j,t_ij])
/// where t_ij is the gold label index (NULL for absent arcs).
double loss_from_field(const Tensor3& negF, const LabeledGraph& gold);

/// Recorded forward pass of one sentence: scoring, the unrolled inference
/// trajectory with per-step contraction caches, and the loss. The reverse
/// pass walks these records once, newest first.
struct Tape {
    ScoreTape scoring;
    std::vector<Tensor3> fields;        // -F^0 .. -F^iters; fields[0] = s_arc
    std::vector<Posterior> posteriors;  // clamped softmax of each field
    std::vector<std::array<CpdUpdateTrace, 3>> step_traces;  // per step, per relation
    LabeledGraph gold;
    double loss = 0.0;
};

Tape forward(const ParamStore& params, const ModelConfig& config,
             const std::vector<std::size_t>& word_ids, const LabeledGraph& gold,
             std::size_t iters);

/// Loss only, for finite differencing.
double forward_loss(const ParamStore& params, const ModelConfig& config,
                    const std::vector<std::size_t>& word_ids, const LabeledGraph& gold,
                    std::size_t iters);

/// Reverse pass; accumulates into `grads` (same names and shapes as params).
void backward(const Tape& tape, const ParamStore& params, const ModelConfig& config,
              ParamStore& grads);

struct LossReport {
    double total = 0.0;
    std::vector<double> per_sentence;
    std::vector<std::pair<std::string, double>> grad_norms;  // per parameter tensor
};

/// Losses and gradient norms over a list of sentences, without updating
/// anything.
LossReport loss_report(const ParamStore& params, const ModelConfig& config,
                       const std::vector<std::vector<std::size_t>>& word_ids,
                       const std::vector<LabeledGraph>& golds, std::size_t iters);

/// AdamW with decoupled weight decay, bias-corrected moments.
class AdamW {
  public:
    AdamW(const ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    /// One update; lr is the already-scheduled learning rate.
    void step(ParamStore& params, const ParamStore& grads, double lr,
              double weight_decay);

    std::size_t steps_taken() const { return t_; }

  private:
    ParamStore m_;
    ParamStore v_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Scales grads in place so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(ParamStore& grads, double max_norm);

struct TrainConfig {
    Hyperparams hp = Hyperparams::desk();
    std::size_t batch_tokens = 256;
    double weight_decay = 1e-6;
    double clip_norm = 5.0;
    double warmup_frac = 0.5;  // linear warmup over this fraction of all steps
    std::size_t window = 2;
    bool labeled_factors = true;
    std::size_t threads = 1;
    std::size_t max_len = 150;
    bool eval_train = false;    // also score the training split each epoch
    double stop_train_lf1 = -1.0;  // early stop once train LF1 reaches this
};

struct TrainResult {
    Checkpoint best;  // highest dev LF1 (last epoch when no dev split)
    std::vector<std::string> log_lines;
    std::vector<double> epoch_losses;
    double best_dev_lf1 = 0.0;
    std::size_t best_epoch = 0;
    double final_train_lf1 = -1.0;
    std::size_t epochs_run = 0;
};

/// Full training loop: shuffled token-count batches, Kahan gradient
/// accumulation, global-norm clipping, AdamW with linear warmup, per-epoch
/// key=value metrics records, best-dev checkpoint selection. Deterministic
/// for a fixed seed and thread count. Throws NumericError on divergence.
TrainResult train(const SdpDocument& train_doc, const SdpDocument* dev_doc,
                  const TrainConfig& cfg, std::ostream* log);

/// Parses every sentence of a document with a trained model.
std::vector<LabeledGraph> parse_document(const Checkpoint& ckpt, const SdpDocument& doc,
                                         std::size_t iters, std::size_t threads = 1);

struct FdGroupReport {
    std::string group;
    double max_rel_dev = 0.0;
    std::size_t coords = 0;
    std::size_t skipped = 0;  // probes that straddled an activation kink
};

/// Central-difference check of backward() against forward_loss(), sampling
/// up to coords_per_group coordinates of every parameter tensor. Probes
/// whose +h/-h evaluations disagree on any pre-activation sign are skipped:
/// the difference quotient is meaningless across a LeakyReLU kink.
/// Deviation metric: |analytic - fd| / max(1, |analytic|, |fd|).
std::vector<FdGroupReport> finite_diff_check(const ParamStore& params,
                                             const ModelConfig& config,
                                             const std::vector<std::size_t>& word_ids,
                                             const LabeledGraph& gold,
                                             std::size_t iters,
                                             std::size_t coords_per_group, double h,
                                             std::uint64_t seed);

}  // namespace sdparse
