#include "magnet/eval.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace magnet {

namespace {

struct KMeans {
    std::vector<double> centers;  // ascending
    std::vector<int> labels;
    double inertia = std::numeric_limits<double>::infinity();
};

KMeans lloyd(const std::vector<double>& x, int k, std::mt19937_64& rng) {
    const std::size_t n = x.size();
    // k-means++ seeding.
    std::vector<double> centers;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers.push_back(x[pick(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
            d2[i] = best;
            total += best;
        }
        if (total == 0.0) break;
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng);
        std::size_t i = 0;
        for (; i + 1 < n; ++i) {
            r -= d2[i];
            if (r <= 0.0) break;
        }
        centers.push_back(x[i]);
    }
    KMeans out;
    out.labels.assign(n, 0);
    for (int iter = 0; iter < 300; ++iter) {
        std::sort(centers.begin(), centers.end());
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            for (int c = 1; c < static_cast<int>(centers.size()); ++c) {
                if (std::abs(x[i] - centers[static_cast<std::size_t>(c)]) <
                    std::abs(x[i] - centers[static_cast<std::size_t>(best)])) {
                    best = c;
                }
            }
            if (best != out.labels[i]) changed = true;
            out.labels[i] = best;
        }
        std::vector<double> sum(centers.size(), 0.0);
        std::vector<int> cnt(centers.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[static_cast<std::size_t>(out.labels[i])] += x[i];
            ++cnt[static_cast<std::size_t>(out.labels[i])];
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
        }
        if (!changed && iter > 0) break;
    }
    out.centers = centers;
    out.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - centers[static_cast<std::size_t>(out.labels[i])];
        out.inertia += d * d;
    }
    return out;
}

double mean_silhouette(const std::vector<double>& x, const std::vector<int>& labels, int k) {
    const std::size_t n = x.size();
    std::vector<int> size(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++size[static_cast<std::size_t>(l)];
    double total = 0.0;
    std::vector<double> dist(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist.begin(), dist.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) dist[static_cast<std::size_t>(labels[j])] += std::abs(x[i] - x[j]);
        const auto own = static_cast<std::size_t>(labels[i]);
        if (size[own] <= 1) continue;  // singleton: silhouette 0
        const double a = dist[own] / (size[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            if (c != own && size[c] > 0) b = std::min(b, dist[c] / size[c]);
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

PredictionRecord ranked_record(const TrialRecord& t, std::vector<double> scores) {
    PredictionRecord p;
    p.trial_id = t.trial_id;
    for (const auto& s : t.targets) p.target_ids.push_back(s.id);
    p.log_density = std::move(scores);
    p.ranked = rank_by_score(p.target_ids, p.log_density);
    return p;
}

}  // namespace

Outcome outcome_of(const PredictionRecord& p, const TrialRecord& t) {
    if (p.trial_id != t.trial_id) throw InputError("prediction " + p.trial_id + " paired with trial " + t.trial_id);
    if (p.ranked.size() != t.targets.size()) {
        throw InputError("prediction " + p.trial_id + " does not rank every target");
    }
    Outcome o{t.trial_id, 0, static_cast<int>(t.targets.size()), t.rmsa};
    for (std::size_t i = 0; i < p.ranked.size(); ++i) {
        if (p.ranked[i] == t.intended_id) o.rank = static_cast<int>(i) + 1;
    }
    if (o.rank == 0) throw InputError("prediction " + p.trial_id + " omits the intended target");
    return o;
}

std::vector<Outcome> outcomes_of(const std::vector<PredictionRecord>& preds, const std::vector<TrialRecord>& trials) {
    if (preds.size() != trials.size()) throw InputError("prediction and trial counts differ");
    std::vector<Outcome> out;
    out.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) out.push_back(outcome_of(preds[i], trials[i]));
    return out;
}

double error_at_k(const std::vector<Outcome>& outcomes, int k) {
    if (outcomes.empty()) throw InputError("error_at_k: no outcomes");
    if (k < 1) throw UsageError("error_at_k: k must be >= 1");
    int misses = 0;
    for (const auto& o : outcomes) {
        if (k > o.n_targets) {
            throw UsageError("error_at_k: k = " + std::to_string(k) + " exceeds the " + std::to_string(o.n_targets) +
                             " targets of trial " + o.trial_id);
        }
        if (o.rank == 0 || o.rank > k) ++misses;
    }
    return static_cast<double>(misses) / static_cast<double>(outcomes.size());
}

GroupingRule cluster_threshold(const std::vector<double>& values, std::uint64_t seed) {
    if (values.size() < 6) throw InputError("cluster_threshold needs >= 6 values, got " + std::to_string(values.size()));
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) throw NumericError("cluster_threshold: all RMSA values are equal (degenerate)");
    std::mt19937_64 rng(seed);
    GroupingRule best;
    best.kind = GroupingRule::Kind::cluster_midpoint;
    best.silhouette = -std::numeric_limits<double>::infinity();
    const std::size_t distinct = std::set<double>(values.begin(), values.end()).size();
    for (int k = 2; k <= 5 && static_cast<std::size_t>(k) <= distinct; ++k) {
        KMeans km;
        for (int restart = 0; restart < 10; ++restart) {
            KMeans trial = lloyd(values, k, rng);
            if (trial.inertia < km.inertia) km = std::move(trial);
        }
        const double s = mean_silhouette(values, km.labels, k);
        if (s > best.silhouette) {
            best.silhouette = s;
            best.k = k;
            best.centers = km.centers;
        }
    }
    best.thresholds.clear();
    double widest = -1.0;
    for (std::size_t c = 0; c + 1 < best.centers.size(); ++c) {
        const double mid = 0.5 * (best.centers[c] + best.centers[c + 1]);
        best.thresholds.push_back(mid);
        if (best.centers[c + 1] - best.centers[c] > widest) {
            widest = best.centers[c + 1] - best.centers[c];
            best.threshold = mid;
        }
    }
    return best;
}

GroupingRule mean_threshold(const std::vector<double>& values) {
    if (values.empty()) throw InputError("mean_threshold: no values");
    GroupingRule r;
    r.kind = GroupingRule::Kind::mean;
    r.threshold = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    r.thresholds = {r.threshold};
    return r;
}

GroupedErrors grouped_errors(const std::vector<Outcome>& outcomes, const GroupingRule& rule) {
    std::vector<Outcome> g1, g2;
    for (const auto& o : outcomes) (o.rmsa < rule.threshold ? g1 : g2).push_back(o);
    GroupedErrors out;
    out.n_g1 = static_cast<int>(g1.size());
    out.n_g2 = static_cast<int>(g2.size());
    if (!g1.empty()) out.g1 = error_at_k(g1, 1);
    if (!g2.empty()) out.g2 = error_at_k(g2, 1);
    return out;
}

Outcome border_outcome(const TrialRecord& t) {
    const TargetState& target = t.intended();
    const bool hit = (t.endpoint - target.center).norm() <= target_radius(t.dim(), target.size);
    return {t.trial_id, hit ? 1 : 0, static_cast<int>(t.targets.size()), t.rmsa};
}

PredictionRecord distance_predict(const TrialRecord& t) {
    std::vector<double> scores;
    for (const auto& s : t.targets) scores.push_back(-(t.endpoint - s.center).norm());
    return ranked_record(t, std::move(scores));
}

PredictionRecord expert_predict(const TrialRecord& t, const ExpertSpec& e, const Eigen::Vector3d& depth_axis) {
    if (e.dim != t.dim()) {
        throw ConfigError("expert '" + e.id + "' is " + std::to_string(e.dim) + "D, trial is " + std::to_string(t.dim()) + "D");
    }
    const Posterior post = bayes_posterior(t.targets, e.params, t.endpoint, depth_axis);
    PredictionRecord p = ranked_record(t, post.log_density);
    p.expert_ids = {e.id};
    return p;
}

Outcome baseline_outcome(const std::string& method, const TrialRecord& t, const ExpertRegistry* registry,
                         const Eigen::Vector3d& depth_axis) {
    if (method == "border") return border_outcome(t);
    if (method == "distance") return outcome_of(distance_predict(t), t);
    if (method.rfind("expert:", 0) == 0) {
        if (registry == nullptr) throw UsageError("expert baseline needs a registry");
        return outcome_of(expert_predict(t, registry->at(method.substr(7)), depth_axis), t);
    }
    throw UsageError("unknown baseline method '" + method + "' (expected border, distance or expert:<id>)");
}

}  // namespace magnet
