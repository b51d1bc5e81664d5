#include "balancedit/backbone/pretrain.hpp"

#include <cmath>
#include <numeric>

#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"
#include "balancedit/numerics/adam.hpp"

namespace balancedit::backbone {

double exact_match_accuracy(const BackboneModel& model, std::span<const TrainingExample> examples) {
    if (examples.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (const auto& ex : examples) {
        if (model.greedy_decode(ex.image, ex.prompt, nullptr) == ex.answer) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

void PretrainOptions::validate() const {
    if (epochs < 0 || batch_size < 1 || !(lr > 0.0)) {
        fail(ErrorKind::config, "pretrain needs epochs >= 0, batch_size >= 1 and lr > 0");
    }
    if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
        fail(ErrorKind::config, "pretrain final_lr_fraction must be in [0, 1]");
    }
}

TrainingLog pretrain(BackboneModel& model, const EpochSampler& sampler, std::span<const TrainingExample> heldout,
                     const PretrainOptions& options, const std::function<void(int, double)>& on_epoch) {
    options.validate();
    auto& params = model.parameters();
    std::vector<numerics::AdamState> states;
    states.reserve(params.size());
    for (const auto& p : params) {
        states.emplace_back(p, numerics::AdamHyper{.lr = options.lr});
    }
    model.zero_grad();

    Rng rng(derive_seed(options.seed, 0x70726574ULL));
    TrainingLog log;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const std::vector<TrainingExample> train = sampler(epoch);
        if (train.empty()) {
            fail(ErrorKind::data, "pretraining set is empty");
        }
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Linear decay to final_lr_fraction * lr over the run.
        const double progress = options.epochs > 1 ? static_cast<double>(epoch) / (options.epochs - 1) : 0.0;
        const double lr = options.lr * (1.0 - (1.0 - options.final_lr_fraction) * progress);
        for (auto& s : states) {
            s.hyper.lr = lr;
        }
        rng.shuffle(std::span(order));
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const TrainingExample& ex = train[order[i]];
                AnswerLoss al = model.answer_loss_traced(ex.image, ex.prompt, ex.answer, nullptr);
                if (!std::isfinite(al.loss)) {
                    fail(ErrorKind::divergence, "pretraining loss became non-finite in epoch " + std::to_string(epoch));
                }
                total += al.loss;
                for (double& g : al.dlogits.data()) {
                    g *= inv;
                }
                model.backward(al.trace, al.dlogits);
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                numerics::adam_step(params[p], states[p]);
            }
        }
        const double mean = total / static_cast<double>(train.size());
        log.epoch_loss.push_back(mean);
        if (on_epoch) {
            on_epoch(epoch, mean);
        }
    }
    log.heldout_accuracy = exact_match_accuracy(model, heldout);
    log.reached_target = log.heldout_accuracy >= options.target_accuracy;
    return log;
}

TrainingLog pretrain(BackboneModel& model, std::span<const TrainingExample> train,
                     std::span<const TrainingExample> heldout, const PretrainOptions& options,
                     const std::function<void(int, double)>& on_epoch) {
    if (train.empty()) {
        fail(ErrorKind::data, "pretraining set is empty");
    }
    const EpochSampler fixed = [train](int) { return std::vector<TrainingExample>(train.begin(), train.end()); };
    return pretrain(model, fixed, heldout, options, on_epoch);
}

}  // namespace balancedit::backbone
