#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "balancedit/backbone/model.hpp"

namespace balancedit::backbone {

struct TrainingExample {
    ImageFeature image;
    TokenSequence prompt;
    TokenSequence answer;
};

struct PretrainOptions {
    int epochs = 36;
    double lr = 5e-3;
    double final_lr_fraction = 0.05;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double target_accuracy = 0.95;

    // Throws ErrorKind::config.
    void validate() const;
};

struct TrainingLog {
    std::vector<double> epoch_loss;
    double heldout_accuracy = 0.0;
    bool reached_target = false;
};

// Fraction of examples whose greedy decode equals the answer exactly.
double exact_match_accuracy(const BackboneModel& model, std::span<const TrainingExample> examples);

// Training examples for a given epoch; lets callers draw fresh image noise each pass.
using EpochSampler = std::function<std::vector<TrainingExample>(int epoch)>;

// Mini-batch Adam over every parameter. Missing the accuracy target is reported in
// the log, not thrown; a non-finite loss throws ErrorKind::divergence.
TrainingLog pretrain(BackboneModel& model, const EpochSampler& train, std::span<const TrainingExample> heldout,
                     const PretrainOptions& options, const std::function<void(int epoch, double loss)>& on_epoch = {});

// Same examples every epoch.
TrainingLog pretrain(BackboneModel& model, std::span<const TrainingExample> train,
                     std::span<const TrainingExample> heldout, const PretrainOptions& options,
                     const std::function<void(int epoch, double loss)>& on_epoch = {});

}  // namespace balancedit::backbone
