#include "mmg/train.hpp"

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace mmg {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitSalt = 0x73706c6974ULL;
constexpr std::uint64_t kFewShotSalt = 0x73686f74ULL;
constexpr std::uint64_t kOrderSalt = 0x6f72646572ULL;

std::vector<std::vector<int>> group_by_class(
    const std::vector<Episode>& data, int k) {
    std::vector<std::vector<int>> per_class(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < data.size(); ++i)
        per_class[static_cast<std::size_t>(data[i].class_id)].push_back(
            static_cast<int>(i));
    return per_class;
}

} // namespace

int num_classes(const std::vector<Episode>& data) {
    if (data.empty()) throw ConfigError("dataset holds no episodes");
    int k = 0;
    for (const Episode& e : data) {
        if (e.class_id < 0)
            throw ConfigError("episode is missing its class id");
        k = std::max(k, e.class_id + 1);
    }
    return k;
}

std::pair<std::vector<int>, std::vector<int>> split_stratified(
    const std::vector<Episode>& data, double val_fraction,
    std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("val_fraction must lie strictly between 0 and 1");
    const int k = num_classes(data);
    auto per_class = group_by_class(data, k);
    std::vector<int> train, val;
    for (int c = 0; c < k; ++c) {
        auto& idx = per_class[static_cast<std::size_t>(c)];
        if (idx.empty())
            throw ConfigError("class " + std::to_string(c) +
                              " has no episodes");
        Rng rng = Rng::keyed(seed, kSplitSalt,
                             static_cast<std::uint64_t>(c));
        shuffle(idx, rng);
        const auto n_val = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(idx.size())));
        if (n_val == 0 || n_val == idx.size())
            throw ConfigError("class " + std::to_string(c) + " with " +
                              std::to_string(idx.size()) +
                              " episodes cannot be split at fraction " +
                              std::to_string(val_fraction));
        val.insert(val.end(), idx.begin(),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(),
                     idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                     idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

std::pair<std::vector<int>, std::vector<int>> split_few_shot(
    const std::vector<Episode>& data, int shots, std::uint64_t seed) {
    if (shots <= 0) throw ConfigError("shots must be positive");
    const int k = num_classes(data);
    auto per_class = group_by_class(data, k);
    std::vector<int> train, val;
    for (int c = 0; c < k; ++c) {
        auto& idx = per_class[static_cast<std::size_t>(c)];
        if (static_cast<std::size_t>(shots) >= idx.size())
            throw ConfigError(
                "class " + std::to_string(c) + " has only " +
                std::to_string(idx.size()) +
                " episodes; few-shot training needs shots strictly below "
                "that so evaluation keeps at least one");
        Rng rng = Rng::keyed(seed, kFewShotSalt,
                             static_cast<std::uint64_t>(c));
        shuffle(idx, rng);
        train.insert(train.end(), idx.begin(), idx.begin() + shots);
        val.insert(val.end(), idx.begin() + shots, idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

std::pair<std::vector<int>, std::vector<int>> split_unseen(
    const std::vector<Episode>& data, const std::vector<int>& held_out,
    double val_fraction, std::uint64_t seed) {
    const int k = num_classes(data);
    std::set<int> held(held_out.begin(), held_out.end());
    if (held.empty()) throw ConfigError("no held-out classes given");
    for (int c : held)
        if (c < 0 || c >= k)
            throw IndexError("held-out class " + std::to_string(c) +
                             " does not exist");
    if (static_cast<int>(held.size()) >= k)
        throw ConfigError("holding out every class leaves nothing to "
                          "train on");
    auto per_class = group_by_class(data, k);
    std::vector<int> train, val;
    for (int c = 0; c < k; ++c) {
        auto& idx = per_class[static_cast<std::size_t>(c)];
        if (idx.empty())
            throw ConfigError("class " + std::to_string(c) +
                              " has no episodes");
        if (held.count(c)) {
            val.insert(val.end(), idx.begin(), idx.end());
            continue;
        }
        Rng rng = Rng::keyed(seed, kSplitSalt,
                             static_cast<std::uint64_t>(c));
        shuffle(idx, rng);
        const auto n_val = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(idx.size())));
        if (n_val == 0 || n_val == idx.size())
            throw ConfigError("class " + std::to_string(c) + " with " +
                              std::to_string(idx.size()) +
                              " episodes cannot be split at fraction " +
                              std::to_string(val_fraction));
        val.insert(val.end(), idx.begin(),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(),
                     idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                     idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

Metrics Metrics::from_confusion(const Eigen::MatrixXi& confusion) {
    if (confusion.rows() == 0 || confusion.rows() != confusion.cols())
        throw ShapeError("confusion matrix must be square and non-empty");
    if (confusion.minCoeff() < 0)
        throw ConfigError("confusion matrix holds negative counts");
    const double total = confusion.sum();
    if (total == 0.0)
        throw ConfigError("confusion matrix holds no observations");

    Metrics m;
    m.confusion = confusion;
    m.accuracy = static_cast<double>(confusion.trace()) / total;
    const auto k = confusion.rows();
    for (Eigen::Index c = 0; c < k; ++c) {
        const double tp = confusion(c, c);
        const double fp = confusion.col(c).sum() - tp;
        const double fn = confusion.row(c).sum() - tp;
        const double tn = total - tp - fp - fn;
        const double p = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        m.precision.push_back(p);
        m.recall.push_back(r);
        m.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
        m.per_class_accuracy.push_back((tp + tn) / total);
    }
    const auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) /
               static_cast<double>(v.size());
    };
    m.macro_precision = mean_of(m.precision);
    m.macro_recall = mean_of(m.recall);
    m.macro_f1 = mean_of(m.f1);
    m.macro_accuracy = mean_of(m.per_class_accuracy);
    return m;
}

json Metrics::to_json() const {
    json per_class = json::array();
    for (std::size_t c = 0; c < precision.size(); ++c)
        per_class.push_back({{"class", c},
                             {"precision", precision[c]},
                             {"recall", recall[c]},
                             {"f1", f1[c]},
                             {"accuracy", per_class_accuracy[c]}});
    json rows = json::array();
    for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < confusion.cols(); ++c)
            row.push_back(confusion(r, c));
        rows.push_back(std::move(row));
    }
    return json{{"accuracy", accuracy},
                {"macro_precision", macro_precision},
                {"macro_recall", macro_recall},
                {"macro_f1", macro_f1},
                {"macro_accuracy", macro_accuracy},
                {"per_class", std::move(per_class)},
                {"confusion", std::move(rows)}};
}

std::string Metrics::table() const {
    std::ostringstream os;
    os << "confusion (rows true, cols predicted):\n";
    for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
        for (Eigen::Index c = 0; c < confusion.cols(); ++c) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%6d", confusion(r, c));
            os << buf;
        }
        os << "\n";
    }
    char line[160];
    std::snprintf(line, sizeof(line),
                  "accuracy %.4f   macro precision %.4f   macro recall "
                  "%.4f   macro f1 %.4f   macro accuracy %.4f\n",
                  accuracy, macro_precision, macro_recall, macro_f1,
                  macro_accuracy);
    os << line;
    for (std::size_t c = 0; c < precision.size(); ++c) {
        std::snprintf(line, sizeof(line),
                      "class %zu: precision %.4f  recall %.4f  f1 %.4f  "
                      "accuracy %.4f\n",
                      c, precision[c], recall[c], f1[c],
                      per_class_accuracy[c]);
        os << line;
    }
    return os.str();
}

int predict(const ModelParams& params, const Episode& ep) {
    NoGradGuard ng;
    EpisodeState st;
    ensure_graph(params, st, ep);
    if (params.config.variant == Variant::Full) adapt_state(params, st);
    const Tensor logits = forward_logits(params, st, ep);
    Eigen::Index best = 0;
    logits.value().col(0).maxCoeff(&best);
    return static_cast<int>(best);
}

Metrics evaluate(const ModelParams& params, const std::vector<Episode>& data,
                 const std::vector<int>& indices) {
    const int k = params.config.num_classes;
    if (indices.empty()) throw ConfigError("nothing to evaluate on");
    Eigen::MatrixXi conf = Eigen::MatrixXi::Zero(k, k);
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= data.size())
            throw IndexError("evaluation index " + std::to_string(i) +
                             " is out of range");
        const Episode& ep = data[static_cast<std::size_t>(i)];
        if (ep.class_id < 0 || ep.class_id >= k)
            throw IndexError("episode class " +
                             std::to_string(ep.class_id) +
                             " exceeds the model's " + std::to_string(k) +
                             " classes");
        conf(ep.class_id, predict(params, ep)) += 1;
    }
    return Metrics::from_confusion(conf);
}

TrainResult train(const std::vector<Episode>& data, const ModelConfig& mc,
                  const TrainConfig& tc, std::ostream* log,
                  const std::vector<int>* train_indices,
                  const std::vector<int>* val_indices) {
    if (tc.epochs <= 0) throw ConfigError("epochs must be positive");
    if (tc.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (mc.num_classes != num_classes(data))
        throw ConfigError("model is configured for " +
                          std::to_string(mc.num_classes) +
                          " classes but the dataset has " +
                          std::to_string(num_classes(data)));
    if (static_cast<bool>(train_indices) != static_cast<bool>(val_indices))
        throw ConfigError("give both index lists or neither");

    std::vector<int> train_idx, val_idx;
    if (train_indices) {
        train_idx = *train_indices;
        val_idx = *val_indices;
        if (train_idx.empty() || val_idx.empty())
            throw ConfigError("explicit split has an empty side");
    } else {
        std::tie(train_idx, val_idx) =
            split_stratified(data, tc.val_fraction, tc.seed);
    }

    ModelParams model = init_params(mc, tc.seed);
    std::vector<Tensor> params = model.tensors();
    AdamState adam;
    const LrSchedule sched{tc.base_lr, tc.warmup_epochs, tc.epochs};

    std::vector<EpisodeState> states(train_idx.size());

    TrainResult res;
    res.train_indices = train_idx;
    res.val_indices = val_idx;
    double best_acc = -1.0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = lr_at(sched, epoch);
        // Graphs exist after the first epoch touched them; from then on
        // the adaptive variant re-shapes each topology once per epoch.
        if (mc.variant == Variant::Full && epoch > 0)
            for (EpisodeState& st : states) adapt_state(model, st);

        std::vector<int> order(train_idx.size());
        std::iota(order.begin(), order.end(), 0);
        Rng erng = Rng::keyed(tc.seed, kOrderSalt,
                              static_cast<std::uint64_t>(epoch));
        shuffle(order, erng);

        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t b = 0; b < order.size();
             b += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(
                order.size(), b + static_cast<std::size_t>(tc.batch_size));
            zero_grads(params);
            Tensor total;
            for (std::size_t k = b; k < end; ++k) {
                const auto slot = static_cast<std::size_t>(order[k]);
                const Episode& ep =
                    data[static_cast<std::size_t>(train_idx[slot])];
                Tensor logits = forward_logits(model, states[slot], ep);
                Eigen::Index am = 0;
                logits.value().col(0).maxCoeff(&am);
                if (static_cast<int>(am) == ep.class_id) ++correct;
                Tensor loss = cross_entropy_with_logits(logits, ep.class_id);
                total = total.valid() ? total + loss : loss;
            }
            Tensor batch_loss = total / static_cast<double>(end - b);
            backward(batch_loss);
            adam_step(params, adam, lr);
            loss_sum += batch_loss.item() * static_cast<double>(end - b);
        }

        const double train_loss =
            loss_sum / static_cast<double>(order.size());
        const double train_acc = static_cast<double>(correct) /
                                 static_cast<double>(order.size());
        const Metrics vm = evaluate(model, data, val_idx);
        res.history.push_back({lr, train_loss, train_acc, vm.accuracy});

        if (vm.accuracy > best_acc) {
            best_acc = vm.accuracy;
            res.best_epoch = epoch;
            res.params = model.clone();
            res.adam = adam;
            res.val_metrics = vm;
        }
        if (log) {
            char line[160];
            std::snprintf(line, sizeof(line),
                          "epoch %3d  lr %.6e  loss %.4f  train %.4f  "
                          "val %.4f%s\n",
                          epoch, lr, train_loss, train_acc, vm.accuracy,
                          epoch == res.best_epoch ? "  *" : "");
            *log << line << std::flush;
        }
    }
    return res;
}

std::vector<AblationRow> ablate(const std::vector<Episode>& data,
                                const ModelConfig& mc, const TrainConfig& tc,
                                std::ostream* log) {
    const Variant variants[] = {Variant::VisualOnly, Variant::PlusText,
                                Variant::StaticGraph, Variant::Full};
    struct Run {
        Variant variant;
        std::uint64_t seed;
    };
    std::vector<Run> runs;
    for (Variant v : variants)
        for (std::uint64_t s : {tc.seed, tc.seed + 1, tc.seed + 2})
            runs.push_back({v, s});

    std::vector<std::future<Metrics>> futures;
    futures.reserve(runs.size());
    for (const Run& run : runs)
        futures.push_back(std::async(std::launch::async, [&data, &mc, &tc,
                                                          run] {
            ModelConfig cfg = mc;
            cfg.variant = run.variant;
            TrainConfig t = tc;
            t.seed = run.seed;
            return train(data, cfg, t).val_metrics;
        }));

    std::vector<AblationRow> rows;
    for (std::size_t v = 0; v < std::size(variants); ++v) {
        AblationRow row;
        row.variant = variants[v];
        for (std::size_t s = 0; s < 3; ++s) {
            const std::size_t r = v * 3 + s;
            const Metrics m = futures[r].get();
            row.seeds.push_back(runs[r].seed);
            row.accuracies.push_back(m.accuracy);
            row.macro_f1s.push_back(m.macro_f1);
        }
        row.mean_accuracy = std::accumulate(row.accuracies.begin(),
                                            row.accuracies.end(), 0.0) /
                            3.0;
        row.mean_macro_f1 = std::accumulate(row.macro_f1s.begin(),
                                            row.macro_f1s.end(), 0.0) /
                            3.0;
        rows.push_back(std::move(row));
        if (log) {
            char line[160];
            std::snprintf(line, sizeof(line),
                          "%-12s  mean val accuracy %.4f  mean macro f1 "
                          "%.4f\n",
                          to_string(rows.back().variant),
                          rows.back().mean_accuracy,
                          rows.back().mean_macro_f1);
            *log << line << std::flush;
        }
    }
    return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant       per-seed val accuracy      mean acc   mean "
          "macro f1\n";
    for (const AblationRow& r : rows) {
        char line[160];
        std::string seeds;
        for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
            char cell[32];
            std::snprintf(cell, sizeof(cell), "%s%.4f",
                          i == 0 ? "" : "  ", r.accuracies[i]);
            seeds += cell;
        }
        std::snprintf(line, sizeof(line), "%-12s  %-25s  %.4f     %.4f\n",
                      to_string(r.variant), seeds.c_str(), r.mean_accuracy,
                      r.mean_macro_f1);
        os << line;
    }
    return os.str();
}

json ablation_json(const std::vector<AblationRow>& rows) {
    json out = json::array();
    for (const AblationRow& r : rows)
        out.push_back({{"variant", to_string(r.variant)},
                       {"seeds", r.seeds},
                       {"val_accuracies", r.accuracies},
                       {"macro_f1s", r.macro_f1s},
                       {"mean_accuracy", r.mean_accuracy},
                       {"mean_macro_f1", r.mean_macro_f1}});
    return out;
}

} // namespace mmg
