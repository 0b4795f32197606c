#include "magnet/train.hpp"

#include "magnet/datagen.hpp"
#include "magnet/errors.hpp"
#include "magnet/nn/optim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace magnet {

void TrainConfig::validate() const {
    if (shots < 1) throw ConfigError("train.shots must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs) throw ConfigError("train.patience must be in [1, max_epochs]");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(margin >= 0.0)) throw ConfigError("train.margin must be >= 0");
    if (!(lambda_div >= 0.0)) throw ConfigError("train.lambda_div must be >= 0");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"shots", c.shots},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"margin", c.margin},
            {"lambda_div", c.lambda_div},
            {"hardest_negative", c.hardest_negative},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.shots = j.value("shots", c.shots);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.margin = j.value("margin", c.margin);
        c.lambda_div = j.value("lambda_div", c.lambda_div);
        c.hardest_negative = j.value("hardest_negative", c.hardest_negative);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig default_train_config(int dim) {
    TrainConfig c;
    c.batch_size = dim == 3 ? 16 : 32;
    return c;
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopper::update(int epoch, double val_loss) {
    improved_ = val_loss < best_;
    if (improved_) {
        best_ = val_loss;
        best_epoch_ = epoch;
        stale_ = 0;
        return false;
    }
    return ++stale_ >= patience_;
}

nlohmann::json TrainLog::to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& x : epochs) {
        e.push_back({{"epoch", x.epoch},
                     {"lr", x.lr},
                     {"train_loss", x.train_loss},
                     {"train_rank", x.train_rank},
                     {"train_div", x.train_div},
                     {"val_loss", x.val_loss}});
    }
    return {{"epochs", e}, {"best_epoch", best_epoch}, {"stopped_early", stopped_early}, {"seed", seed}};
}

std::pair<SeriesStats, SeriesStats> fit_env_stats(const std::vector<TrialRecord>& trials, int pool) {
    std::vector<const Mat*> vib, acc;
    for (const auto& t : trials) {
        if (t.env.zero_filled || t.env.length() == 0) continue;
        vib.push_back(&t.env.vib);
        acc.push_back(&t.env.acc);
    }
    return {fit_series_stats(vib, pool), fit_series_stats(acc, pool)};
}

namespace {

constexpr int kEvalBatch = 64;

std::vector<const PreparedTrial*> slice(const std::vector<PreparedTrial>& set, const std::vector<std::size_t>& order,
                                        std::size_t begin, std::size_t end) {
    std::vector<const PreparedTrial*> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back(&set[order[i]]);
    return out;
}

template <typename T>
std::vector<nn::Matrix<T>> snapshot(nn::ParameterStore<T>& s) {
    std::vector<nn::Matrix<T>> v;
    for (auto* p : s.all()) v.push_back(p->value);
    return v;
}

template <typename T>
void restore(nn::ParameterStore<T>& s, const std::vector<nn::Matrix<T>>& v) {
    auto all = s.all();
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = v[i];
}

}  // namespace

template <typename T>
EvalLoss evaluate_loss(MagnetModel<T>& m, const std::vector<PreparedTrial>& set, const TrainConfig& cfg) {
    if (set.empty()) throw ConfigError("cannot evaluate the loss of an empty split");
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    EvalLoss out;
    nn::Rng rng(0);
    double rows_total = 0.0;
    for (std::size_t b = 0; b < set.size(); b += kEvalBatch) {
        const auto batch = slice(set, order, b, std::min(set.size(), b + kEvalBatch));
        nn::Graph<T> g;
        auto o = m.forward(g, batch, nn::Mode::eval, rng);
        auto l = m.loss(g, o, batch, cfg.margin, cfg.lambda_div, cfg.hardest_negative);
        const double n = static_cast<double>(batch.size());
        const double rows = static_cast<double>(g.value(o.log_density).rows());
        out.rank += l.rank * n;
        out.div += l.div * rows;
        rows_total += rows;
    }
    out.rank /= static_cast<double>(set.size());
    out.div /= rows_total;
    out.total = out.rank + cfg.lambda_div * out.div;
    return out;
}

template EvalLoss evaluate_loss<float>(MagnetModel<float>&, const std::vector<PreparedTrial>&, const TrainConfig&);
template EvalLoss evaluate_loss<double>(MagnetModel<double>&, const std::vector<PreparedTrial>&, const TrainConfig&);

TrainResult train(const std::vector<TrialRecord>& train_set, const std::vector<TrialRecord>& val_set,
                  const ExpertRegistry& registry, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const ValLossHook& hook) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training split is empty");
    if (val_set.empty()) throw ConfigError("validation split is empty");

    auto [vib, acc] = fit_env_stats(train_set, model_cfg.features.pool);
    TrainResult res;
    res.model = std::make_unique<MagnetModel<float>>(model_cfg, registry, vib, acc, cfg.seed);
    MagnetModel<float>& m = *res.model;
    res.log.seed = cfg.seed;

    std::vector<PreparedTrial> train_p, val_p;
    train_p.reserve(train_set.size());
    val_p.reserve(val_set.size());
    for (const auto& t : train_set) train_p.push_back(m.prepare(t));
    for (const auto& t : val_set) val_p.push_back(m.prepare(t));

    nn::Rng shuffle_rng(mix_seed(cfg.seed, 0x7368756666));
    nn::Rng dropout_rng(mix_seed(cfg.seed, 0x64726f70));
    nn::OptimState<float> optim;
    nn::AdamWConfig ac;
    ac.weight_decay = cfg.weight_decay;
    EarlyStopper stopper(cfg.patience);
    auto best = snapshot(m.params());

    std::vector<std::size_t> order(train_p.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        ac.lr = nn::cosine_lr(epoch, cfg.max_epochs, cfg.lr);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochLog el;
        el.epoch = epoch;
        el.lr = ac.lr;
        double seen = 0.0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const auto batch = slice(train_p, order, b, std::min(order.size(), b + bs));
            nn::Graph<float> g;
            auto o = m.forward(g, batch, nn::Mode::train, dropout_rng);
            auto l = m.loss(g, o, batch, cfg.margin, cfg.lambda_div, cfg.hardest_negative);
            const double total = l.rank + cfg.lambda_div * l.div;
            if (!std::isfinite(total)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                   std::to_string(b) + " (rank " + std::to_string(l.rank) + ", div " +
                                   std::to_string(l.div) + ", first trial " + batch.front()->trial_id + ")");
            }
            m.params().zero_grad();
            g.backward(l.total);
            nn::adamw_step(m.params(), optim, ac);
            const double n = static_cast<double>(batch.size());
            el.train_loss += total * n;
            el.train_rank += l.rank * n;
            el.train_div += l.div * n;
            seen += n;
        }
        el.train_loss /= seen;
        el.train_rank /= seen;
        el.train_div /= seen;
        const EvalLoss vl = evaluate_loss(m, val_p, cfg);
        el.val_loss = vl.total;
        if (hook) {
            if (auto v = hook(epoch, vl.total)) el.val_loss = *v;
        }
        if (!std::isfinite(el.val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
        res.log.epochs.push_back(el);
        spdlog::debug("epoch {} lr {:.2e} train {:.4f} (rank {:.4f} div {:.4f}) val {:.4f}", epoch, el.lr, el.train_loss,
                      el.train_rank, el.train_div, el.val_loss);
        const bool stop = stopper.update(epoch, el.val_loss);
        if (stopper.improved()) best = snapshot(m.params());
        if (stop) {
            res.log.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    restore(m.params(), best);
    res.log.best_epoch = stopper.best_epoch();
    return res;
}

}  // namespace magnet
