#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csn/dataflow.hpp"
#include "csn/model.hpp"

namespace csn {

struct TrainConfig {
  double base_lr = 0.02;
  std::int64_t warmup_epochs = 3;
  std::int64_t total_epochs = 30;
  std::int64_t iters_per_epoch = 50;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;         // iterations between held-out evals; 0 = never
  std::int64_t eval_clips = 10;        // clips per video at eval time
  double early_stop_video_acc = -1.0;  // stop once video@1 reaches this; < 0 disables
  std::string checkpoint_dir;          // empty = no checkpoints
  std::int64_t checkpoint_every = 0;   // iterations; 0 = final checkpoint only

  std::int64_t warmup_iters() const { return warmup_epochs * iters_per_epoch; }
  std::int64_t total_iters() const { return total_epochs * iters_per_epoch; }
  void validate() const;
};

struct HistoryRow {
  std::int64_t iter = 0;  // 0-based iteration index
  double lr = 0.0;
  double loss = 0.0;
  double train_err = 0.0;  // fraction of the batch misclassified
};

struct EvalRow {
  std::int64_t iter = 0;  // iterations completed when the eval ran
  double clip_top1 = 0.0;
  double video_top1 = 0.0;
};

struct RunHistory {
  std::vector<HistoryRow> rows;
  std::vector<EvalRow> evals;

  std::string csv() const;   // iter,lr,loss,train_err
  std::string json() const;  // rows plus eval points
};

// Linear warmup to base_lr over the warmup iterations, then the half-cosine
// decay base_lr * 0.5 * (1 + cos(pi * p)) with p the post-warmup progress.
double lr_at(std::int64_t iter, const TrainConfig& cfg);

// v <- momentum*v + grad + weight_decay*param, param <- param - lr*v.
// BN scale/shift and biases skip weight decay; velocities start at zero.
void sgd_step(Model& model, const ParamMap& grads, ParamMap& velocity, double lr,
              const TrainConfig& cfg);

struct EvalResult {
  double clip_top1 = 0.0;
  double video_top1 = 0.0;
};

// clip@1 over every sampled clip; video@1 from the argmax of the averaged
// clip softmaxes (ties resolve to the lowest class id). Eval mode only.
EvalResult evaluate(const Model& model, const std::vector<VideoClip>& videos,
                    const SampleSpec& sample, std::int64_t n_clips = 10);

// Deterministic SGD over total_epochs * iters_per_epoch mini-batches.
// Iteration i draws from Rng(seed).split(i); batch item j uses that stream's
// split(j) to pick a clip index and its augmentations, so runs with the same
// (model, data, config) reproduce byte-identical histories. Aborts with the
// first non-finite layer named when the loss leaves (-50, 50) or goes NaN.
RunHistory train(Model& model, const std::vector<VideoClip>& train_set,
                 const std::vector<VideoClip>& eval_set, const SampleSpec& sample,
                 const TrainConfig& cfg);

}  // namespace csn
