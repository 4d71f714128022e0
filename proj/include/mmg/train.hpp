#pragma once

#include "mmg/episode.hpp"
#include "mmg/model.hpp"
#include "mmg/optim.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmg {

// Highest class id + 1; every episode must carry a non-negative class id.
int num_classes(const std::vector<Episode>& data);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    int warmup_epochs = 5;
    double base_lr = 1e-4;
    double val_fraction = 0.2;
    std::uint64_t seed = 7;
};

// Classification quality derived from a confusion matrix with true labels
// on rows and predictions on columns.  Per-class precision/recall/F1 use
// the 0-when-undefined convention; per-class accuracy is one-vs-rest
// (TP+TN)/total, and the macro numbers are unweighted class means.
struct Metrics {
    Eigen::MatrixXi confusion;
    double accuracy = 0.0;
    std::vector<double> precision, recall, f1, per_class_accuracy;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double macro_accuracy = 0.0;

    static Metrics from_confusion(const Eigen::MatrixXi& confusion);
    nlohmann::json to_json() const;
    std::string table() const;
};

struct EpochLog {
    double lr = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    ModelParams params;  // snapshot from the best validation epoch
    AdamState adam;      // optimizer state at that same epoch
    Metrics val_metrics;
    std::vector<EpochLog> history;
    int best_epoch = -1;
    std::vector<int> train_indices, val_indices;
};

// Stratified split: per class, a seed-keyed shuffle, then the first
// floor(val_fraction * n) episodes go to validation.  Throws ConfigError
// when any class would end up with an empty side.
std::pair<std::vector<int>, std::vector<int>> split_stratified(
    const std::vector<Episode>& data, double val_fraction,
    std::uint64_t seed);

// shots training episodes per class (seed-keyed choice), everything else
// evaluates.  Asking for every episode of a class (or more) leaves nothing
// to evaluate on and is a ConfigError.
std::pair<std::vector<int>, std::vector<int>> split_few_shot(
    const std::vector<Episode>& data, int shots, std::uint64_t seed);

// Splits for evaluation on classes never trained on: held-out classes
// contribute all their episodes to the eval side and none to training;
// remaining classes split val_fraction as usual, so the eval side covers
// every class.
std::pair<std::vector<int>, std::vector<int>> split_unseen(
    const std::vector<Episode>& data, const std::vector<int>& held_out,
    double val_fraction, std::uint64_t seed);

// Greedy argmax prediction for one episode, on a fresh graph (the
// adaptive variant applies one adaptation pass before the forward run).
int predict(const ModelParams& params, const Episode& ep);

Metrics evaluate(const ModelParams& params, const std::vector<Episode>& data,
                 const std::vector<int>& indices);

// Full training loop: stratified split unless explicit index lists are
// given, Adam on warm-up-then-cosine learning rates, one topology
// adaptation pass per epoch for the adaptive variant, and best-epoch
// selection by validation accuracy.  Progress lines go to `log` when
// provided.  Deterministic for a fixed (config, seed).
TrainResult train(const std::vector<Episode>& data, const ModelConfig& mc,
                  const TrainConfig& tc, std::ostream* log = nullptr,
                  const std::vector<int>* train_indices = nullptr,
                  const std::vector<int>* val_indices = nullptr);

struct AblationRow {
    Variant variant = Variant::Full;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;  // validation accuracy per seed
    std::vector<double> macro_f1s;
    double mean_accuracy = 0.0;
    double mean_macro_f1 = 0.0;
};

// Trains every variant on seeds {seed, seed+1, seed+2} and reports
// per-variant validation quality.  Runs are independent and spread over
// worker threads; results do not depend on scheduling.
std::vector<AblationRow> ablate(const std::vector<Episode>& data,
                                const ModelConfig& mc, const TrainConfig& tc,
                                std::ostream* log = nullptr);

std::string ablation_table(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

} // namespace mmg
