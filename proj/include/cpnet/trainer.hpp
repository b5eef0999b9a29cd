#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpnet/cloud.hpp"
#include "cpnet/disentangle.hpp"
#include "cpnet/losses.hpp"
#include "cpnet/model.hpp"
#include "cpnet/params.hpp"

namespace cpnet {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 4;
    double lr0 = 0.001;
    double lr_decay = 0.7;
    int lr_period = 20;
    double bn_momentum0 = 0.9;
    double bn_decay = 0.5;
    int bn_period = 20;
    double bn_floor = 0.01;
    std::uint64_t seed = 42;
    LossConfig loss = LossConfig::preset(LossPreset::segmentation);
    Manner manner = Manner::H;
    double noise_std = 0.02;
    int jitter_count = -1;  // >= 0 switches to the jittered-point-count variant
    double noise_clip = 0.0;
    bool dual_branch = true;  // false trains the basic branch alone
    int k_graph = 16;
    int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
    std::string out_dir;       // metrics and checkpoints are written here when set

    void validate() const;
};

// lr0 * lr_decay^floor(epoch / lr_period)
double lr_at(int epoch, const TrainConfig& cfg);
// bn_momentum0 * bn_decay^floor(epoch / bn_period), floored at bn_floor
double bn_momentum_at(int epoch, const TrainConfig& cfg);

struct StepRecord {
    int epoch = 0;
    int step = 0;
    double lr = 0;
    LossBreakdown loss;
};

struct TrainResult {
    ParamStore params;
    std::vector<StepRecord> history;
    std::vector<double> epoch_mean_total;
};

struct Checkpoint {
    ParamStore params;
    int epoch = 0;  // completed epochs
    std::uint64_t config_fingerprint = 0;
    std::vector<StepRecord> history;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t train_fingerprint(const CpNetConfig& mcfg, const TrainConfig& tcfg, int n_points);

// Self-supervised pre-training. Per epoch: seeded shuffle, contour-perturbed
// augmentation with fresh per-epoch noise, dual (or basic-only) forward,
// summed batch loss, Adam step under the decayed schedules. Deterministic per
// seed. Pass `resume` to continue a checkpointed run; the continuation
// reproduces the uninterrupted run step for step.
TrainResult pretrain(const std::vector<PointCloud>& dataset, const CpNetConfig& mcfg,
                     const TrainConfig& tcfg, const Checkpoint* resume = nullptr);

// Frozen forward pass (basic branch, eval-mode batch norm, no augmentation).
std::vector<std::vector<double>> extract_features_classify(ParamStore& store,
                                                           const CpNetConfig& cfg,
                                                           const std::vector<PointCloud>& clouds);
// Per-point features; segmentation variant only.
std::vector<Tensor> extract_features_segment(ParamStore& store, const CpNetConfig& cfg,
                                             const std::vector<PointCloud>& clouds);

struct ProbeReport {
    std::string task;  // "classify" | "segment"
    double accuracy = 0.0;
    double instance_miou = 0.0;
    double category_miou = 0.0;
    std::map<std::string, double> per_class;
    double train_fraction = 0.0;
    std::string to_json() const;
};

// Multinomial logistic-regression probe on frozen features (stratified split,
// full-batch gradient descent with a fixed budget).
ProbeReport linear_probe_classify(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels, double train_fraction,
                                  std::uint64_t seed);

// Per-point linear probe on frozen point-wise features; reports instance and
// category mIoU over held-out clouds.
ProbeReport linear_probe_segment(const std::vector<Tensor>& pointwise_features,
                                 const std::vector<std::vector<int>>& part_labels,
                                 const std::vector<int>& categories, double train_fraction,
                                 std::uint64_t seed);

struct ToyGradCheckSpec {
    int n_points = 64;
    int batch = 2;
    std::uint64_t seed = 5;
    // Step small enough that no relu/argmax kink is straddled at this scale;
    // the f64 noise floor of the central difference stays ~1e-7 relative.
    double h = 1e-6;
    int sample = 200;  // parameter elements probed; 0 = all
};

// Finite-difference check of the full dual-branch objective with all five
// loss terms enabled on a small synthetic batch.
GradCheckResult dual_branch_grad_check(const ToyGradCheckSpec& spec);

}  // namespace cpnet
