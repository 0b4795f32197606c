#include "magnet/model.hpp"

#include "magnet/datagen.hpp"
#include "magnet/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace magnet {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

nlohmann::json vec3_json(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    features.validate();
    if (!(tau > 0.0)) throw ConfigError("model.tau must be > 0");
    if (!(rho_mu >= 0.0) || !(rho_sigma >= 0.0)) throw ConfigError("model.rho_mu / rho_sigma must be >= 0");
    if (!(unit_scale > 0.0) || !(v_ref > 0.0) || !(w_ref > 0.0)) {
        throw ConfigError("model.unit_scale, v_ref and w_ref must be > 0");
    }
    if (!(depth_axis.norm() > 0.0)) throw ConfigError("model.depth_axis must be nonzero");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"features", feature_config_to_json(c.features)},
            {"tau", c.tau},
            {"rho_mu", c.rho_mu},
            {"rho_sigma", c.rho_sigma},
            {"unit_scale", c.unit_scale},
            {"v_ref", c.v_ref},
            {"w_ref", c.w_ref},
            {"depth_axis", vec3_json(c.depth_axis)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.features = feature_config_from_json(j.at("features"));
        c.tau = j.at("tau").get<double>();
        c.rho_mu = j.at("rho_mu").get<double>();
        c.rho_sigma = j.at("rho_sigma").get<double>();
        c.unit_scale = j.at("unit_scale").get<double>();
        c.v_ref = j.at("v_ref").get<double>();
        c.w_ref = j.at("w_ref").get<double>();
        const auto d = j.at("depth_axis").get<std::vector<double>>();
        if (d.size() != 3) throw ConfigError("model.depth_axis needs 3 entries");
        c.depth_axis = Eigen::Vector3d(d[0], d[1], d[2]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig model_config_for(const ScenarioConfig& sc) {
    ModelConfig c;
    c.features.dim = sc.dim;
    c.features.extent_min = sc.extent_min();
    c.features.extent_max = sc.extent_max();
    c.features.size_max = *std::max_element(sc.sizes.begin(), sc.sizes.end());
    c.features.speed_max = *std::max_element(sc.speeds.begin(), sc.speeds.end());
    double w = 0.0, v = 0.0, r = 0.0;
    for (double s : sc.sizes) {
        w += s;
        r += sc.radius(s);
    }
    for (double s : sc.speeds) v += s;
    c.w_ref = w / static_cast<double>(sc.sizes.size());
    c.v_ref = v / static_cast<double>(sc.speeds.size());
    c.unit_scale = r / static_cast<double>(sc.sizes.size());
    c.depth_axis = sc.depth_axis;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Flat parameter helpers

int expert_width(int dim) { return 6 * dim; }

Eigen::RowVectorXd flatten_params(const TernaryGaussianParams& p) {
    const int d = p.dim();
    Eigen::RowVectorXd f(expert_width(d));
    for (int a = 0; a < d; ++a) {
        for (int c = 0; c < 3; ++c) {
            f(a * 3 + c) = p.mu(a, c);
            f(3 * d + a * 3 + c) = p.sigma(a, c);
        }
    }
    return f;
}

TernaryGaussianParams unflatten_params(const Eigen::RowVectorXd& flat, int dim) {
    if (flat.size() != expert_width(dim)) throw DimensionError("flat params have the wrong width");
    TernaryGaussianParams p(dim);
    for (int a = 0; a < dim; ++a) {
        for (int c = 0; c < 3; ++c) {
            p.mu(a, c) = flat(a * 3 + c);
            p.sigma(a, c) = flat(3 * dim + a * 3 + c);
        }
    }
    return p;
}

Eigen::RowVectorXd coefficient_scale(const ModelConfig& c) {
    const int d = c.features.dim;
    Eigen::RowVectorXd s(expert_width(d));
    const double per[3] = {c.unit_scale, c.unit_scale / c.v_ref, c.unit_scale / c.w_ref};
    for (int half = 0; half < 2; ++half) {
        for (int a = 0; a < d; ++a) {
            for (int k = 0; k < 3; ++k) s(half * 3 * d + a * 3 + k) = per[k];
        }
    }
    return s;
}

Eigen::RowVectorXd adapt_flat(const Eigen::RowVectorXd& base, const Eigen::RowVectorXd& scale, const Eigen::RowVectorXd& delta,
                              int dim, double rho_mu, double rho_sigma) {
    const int p = expert_width(dim);
    if (base.size() != delta.size() || base.size() % p != 0 || scale.size() != p) {
        throw DimensionError("adapt_flat: base/delta/scale widths disagree");
    }
    Eigen::RowVectorXd out(base.size());
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        const int j = static_cast<int>(i % p);
        const double t = std::tanh(delta(i));
        out(i) = j < 3 * dim ? base(i) + rho_mu * scale(j) * t : base(i) * std::exp(rho_sigma * t);
    }
    return out;
}

double local_log_pdf(const Eigen::RowVectorXd& flat, int dim, const Vec& offset, double v, double w) {
    double lp = 0.0;
    for (int a = 0; a < dim; ++a) {
        const double m = flat(a * 3) + flat(a * 3 + 1) * v + flat(a * 3 + 2) * w;
        const double s0 = flat(3 * dim + a * 3), s1 = flat(3 * dim + a * 3 + 1) * v, s2 = flat(3 * dim + a * 3 + 2) * w;
        const double var = s0 * s0 + s1 * s1 + s2 * s2;
        const double r = offset(a) - m;
        lp += -0.5 * (kLog2Pi + std::log(var) + r * r / var);
    }
    return lp;
}

double mixture_log_density(std::span<const double> log_w, std::span<const double> logp) {
    if (log_w.size() != logp.size() || log_w.empty()) throw DimensionError("mixture: weight/density counts differ");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logp.size(); ++k) m = std::max(m, log_w[k] + logp[k]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < logp.size(); ++k) s += std::exp(log_w[k] + logp[k] - m);
    return m + std::log(s);
}

double diversity_loss(const std::vector<Eigen::RowVectorXd>& v, bool* zero_norm) {
    const std::size_t k = v.size();
    if (zero_norm) *zero_norm = false;
    if (k < 2) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            const double ni = v[i].norm(), nj = v[j].norm();
            if (ni == 0.0 || nj == 0.0) {
                if (zero_norm) *zero_norm = true;
                continue;
            }
            sum += 2.0 * v[i].dot(v[j]) / (ni * nj);
        }
    }
    return sum / static_cast<double>(k * (k - 1));
}

double ranking_loss(double pos, std::span<const double> negatives, double margin, bool hardest) {
    if (negatives.empty()) return 0.0;
    if (hardest) {
        const double neg = *std::max_element(negatives.begin(), negatives.end());
        return std::max(0.0, margin + neg - pos);
    }
    double s = 0.0;
    for (double n : negatives) s += std::max(0.0, margin + n - pos);
    return s / static_cast<double>(negatives.size());
}

ExpertRegistry neutral_registry(const ModelConfig& c) {
    ExpertSpec e;
    e.id = "neutral";
    e.dim = c.features.dim;
    e.params = TernaryGaussianParams(e.dim);
    e.params.sigma.col(0).setConstant(2.0 * c.unit_scale);
    e.provenance = {{"kind", "neutral"}, {"note", "flat isotropic expert, zero means, spread 2x unit scale"}};
    ExpertRegistry r;
    r.experts.push_back(e);
    return r;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
MagnetModel<T>::MagnetModel(ModelConfig cfg, ExpertRegistry registry, SeriesStats vib, SeriesStats acc, std::uint64_t seed)
    : cfg_(std::move(cfg)), registry_(std::move(registry)), vib_stats_(std::move(vib)), acc_stats_(std::move(acc)) {
    cfg_.validate();
    registry_.validate();
    if (registry_.experts.empty()) throw ConfigError("model needs at least one expert");
    const int d = cfg_.features.dim;
    for (const auto& e : registry_.experts) {
        if (e.dim != d) {
            throw ConfigError("expert '" + e.id + "' is " + std::to_string(e.dim) + "D, model is " + std::to_string(d) + "D");
        }
        // A variance that can vanish would make the density degenerate.
        for (int a = 0; a < d; ++a) {
            if (!(e.params.sigma(a, 0) > 0.0)) {
                throw ConfigError("expert '" + e.id + "' has a zero intercept spread on axis " + std::to_string(a));
            }
        }
    }
    if (vib_stats_.mean.size() != kVibChannels || acc_stats_.mean.size() != kAccChannels) {
        throw ConfigError("series stats have the wrong channel counts");
    }
    const int k = experts();
    const int p = expert_width(d);
    base_.resize(k * p);
    for (int i = 0; i < k; ++i) base_.segment(i * p, p) = flatten_params(registry_.experts[static_cast<std::size_t>(i)].params);
    scale_ = coefficient_scale(cfg_);

    nn::Rng rng(mix_seed(seed, 0x696e6974));
    user_enc_ = MlpEncoder<T>(store_, "user", kUserFeatures, kUserDim, kUserDim, rng);
    vib_enc_ = SeriesEncoder<T>(store_, "vib", kVibChannels, rng);
    acc_enc_ = SeriesEncoder<T>(store_, "acc", kAccChannels, rng);
    target_enc_ = MlpEncoder<T>(store_, "target", cfg_.features.target_features(), kTargetDim, kTargetDim, rng);
    caw_ = CawHead<T>(store_, "caw", k, rng);
    adapt1_ = nn::Linear<T>(store_, "adapt.l1", kTargetDim + kContextDim, kAdaptHidden, rng);
    adapt2_ = nn::Linear<T>(store_, "adapt.l2", kAdaptHidden, k * p, rng);
    zero_adaptation();
}

template <typename T>
void MagnetModel<T>::zero_adaptation() {
    adapt2_.weight().value.setZero();
    adapt2_.bias().value.setZero();
}

template <typename T>
void MagnetModel<T>::zero_caw() {
    caw_.last().weight().value.setZero();
    caw_.last().bias().value.setZero();
}

template <typename T>
PreparedTrial MagnetModel<T>::prepare(const TrialRecord& t) const {
    const FeatureConfig& f = cfg_.features;
    if (t.dim() != f.dim) throw ConfigError("trial " + t.trial_id + " is " + std::to_string(t.dim()) + "D, model is " + std::to_string(f.dim) + "D");
    if (t.targets.empty()) throw InputError("trial " + t.trial_id + " has no targets");
    PreparedTrial p;
    p.trial_id = t.trial_id;
    p.user = user_features(t.user, f);
    EnvWindow env = t.env;
    if (env.length() == 0) {
        env = EnvWindow::zeros(50.0, 3.0);
        env.zero_filled = true;
    }
    env.validate();
    p.zero_filled = env.zero_filled;
    p.vib = standardize(pool_series(env.vib, f.pool), vib_stats_);
    p.acc = standardize(pool_series(env.acc, f.pool), acc_stats_);
    p.rmsa = t.rmsa;
    const auto n = static_cast<Eigen::Index>(t.targets.size());
    p.target_features.resize(n, f.target_features());
    p.offsets.resize(n, f.dim);
    p.speed.resize(n);
    p.size.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const TargetState& s = t.targets[static_cast<std::size_t>(i)];
        p.target_features.row(i) = target_features(s, f);
        const LocalFrame fr = local_frame(s, cfg_.depth_axis);
        p.offsets.row(i) = (fr.axes.transpose() * (t.endpoint - fr.origin)).transpose();
        p.speed(i) = s.speed;
        p.size(i) = s.size;
        p.target_ids.push_back(s.id);
        if (s.id == t.intended_id) p.intended_row = static_cast<int>(i);
    }
    return p;
}

template <typename T>
typename MagnetModel<T>::Context MagnetModel<T>::encode(nn::Graph<T>& g, std::span<const PreparedTrial* const> batch,
                                                        nn::Mode mode, nn::Rng& rng) const {
    (void)mode;
    (void)rng;
    if (batch.empty()) throw InputError("empty batch");
    const int b = static_cast<int>(batch.size());
    const int steps = batch[0]->steps();
    int rows = 0;
    for (const auto* t : batch) {
        if (t->steps() != steps) throw InputError("trials in one batch must share the window length");
        rows += t->targets();
    }
    Mat_t users(b, kUserFeatures), vib(b * steps, kVibChannels), acc(b * steps, kAccChannels);
    Mat_t targets(rows, cfg_.features.target_features());
    std::vector<int> owner;
    owner.reserve(static_cast<std::size_t>(rows));
    int r = 0;
    for (int i = 0; i < b; ++i) {
        const PreparedTrial& t = *batch[static_cast<std::size_t>(i)];
        users.row(i) = t.user.cast<T>();
        vib.middleRows(i * steps, steps) = t.vib.cast<T>();
        acc.middleRows(i * steps, steps) = t.acc.cast<T>();
        targets.middleRows(r, t.targets()) = t.target_features.cast<T>();
        for (int j = 0; j < t.targets(); ++j) owner.push_back(i);
        r += t.targets();
    }
    Context c;
    c.h_user = user_enc_.forward(g, g.constant(std::move(users)));
    c.h_vib = vib_enc_.forward(g, g.constant(std::move(vib)), b, steps);
    c.h_acc = acc_enc_.forward(g, g.constant(std::move(acc)), b, steps);
    c.h_target = target_enc_.forward(g, g.constant(std::move(targets)));
    const nn::Var parts[] = {g.gather_rows(c.h_user, owner), g.gather_rows(c.h_vib, owner), g.gather_rows(c.h_acc, owner),
                             c.h_target};
    c.h_con = g.concat_cols(parts);
    return c;
}

template <typename T>
typename MagnetModel<T>::Output MagnetModel<T>::forward(nn::Graph<T>& g, std::span<const PreparedTrial* const> batch,
                                                        nn::Mode mode, nn::Rng& rng) {
    Output o;
    o.ctx = encode(g, batch, mode, rng);
    const int k = experts();
    const int d = dim();
    const int p = expert_width(d);
    const T tau = static_cast<T>(cfg_.tau);
    const T slope = static_cast<T>(nn::kLeakySlope);

    o.logits = caw_.logits(g, o.ctx.h_con, mode, rng);
    o.log_w = g.log_softmax_rows(o.logits, tau);

    const nn::Var adapt_in[] = {o.ctx.h_target, o.ctx.h_con};
    o.delta = adapt2_.forward(g, g.leaky_relu(adapt1_.forward(g, g.concat_cols(adapt_in)), slope));

    const Eigen::Index rows = g.value(o.delta).rows();
    o.row_begin.push_back(0);
    Mat_t offs(rows, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> vs(rows), ws(rows);
    {
        Eigen::Index r = 0;
        for (const auto* t : batch) {
            offs.middleRows(r, t->targets()) = t->offsets.cast<T>();
            vs.segment(r, t->targets()) = t->speed.cast<T>();
            ws.segment(r, t->targets()) = t->size.cast<T>();
            r += t->targets();
            o.row_begin.push_back(static_cast<int>(r));
        }
    }

    // theta' = adapt(delta)
    const Mat_t& dv = g.value(o.delta);
    Mat_t theta(rows, k * p), dtheta(rows, k * p);
    const T rho_mu = static_cast<T>(cfg_.rho_mu), rho_sigma = static_cast<T>(cfg_.rho_sigma);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (int e = 0; e < k * p; ++e) {
            const int j = e % p;
            const T th = std::tanh(dv(i, e));
            const T sech2 = T(1) - th * th;
            const T base = static_cast<T>(base_(e));
            if (j < 3 * d) {
                const T s = rho_mu * static_cast<T>(scale_(j));
                theta(i, e) = base + s * th;
                dtheta(i, e) = s * sech2;
            } else {
                theta(i, e) = base * std::exp(rho_sigma * th);
                dtheta(i, e) = theta(i, e) * rho_sigma * sech2;
            }
        }
    }
    {
        const nn::Var in[] = {o.delta};
        const nn::Var delta = o.delta;
        o.theta = g.custom(in, std::move(theta), [delta, dtheta = std::move(dtheta)](nn::Graph<T>& gr, const Mat_t& go) {
            gr.accumulate(delta, go.cwiseProduct(dtheta));
        });
    }

    // Per-expert diagonal log density in each target's local frame.
    const Mat_t& tv = g.value(o.theta);
    Mat_t logp(rows, k), dtv = Mat_t::Zero(rows, k * p);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const T v = vs(i), w = ws(i);
        for (int e = 0; e < k; ++e) {
            T lp = 0;
            for (int a = 0; a < d; ++a) {
                const Eigen::Index mb = e * p + a * 3, sb = e * p + 3 * d + a * 3;
                const T m = tv(i, mb) + tv(i, mb + 1) * v + tv(i, mb + 2) * w;
                const T s0 = tv(i, sb), s1 = tv(i, sb + 1), s2 = tv(i, sb + 2);
                const T var = s0 * s0 + s1 * s1 * v * v + s2 * s2 * w * w;
                const T res = offs(i, a) - m;
                lp += T(-0.5) * (static_cast<T>(kLog2Pi) + std::log(var) + res * res / var);
                const T dm = res / var;  // d lp / d m
                const T dvar = T(-0.5) / var + T(0.5) * res * res / (var * var);
                dtv(i, mb) = dm;
                dtv(i, mb + 1) = dm * v;
                dtv(i, mb + 2) = dm * w;
                dtv(i, sb) = dvar * T(2) * s0;
                dtv(i, sb + 1) = dvar * T(2) * s1 * v * v;
                dtv(i, sb + 2) = dvar * T(2) * s2 * w * w;
            }
            logp(i, e) = lp;
        }
    }
    {
        const nn::Var in[] = {o.theta};
        const nn::Var th = o.theta;
        o.logp = g.custom(in, std::move(logp), [th, k, p, dtv = std::move(dtv)](nn::Graph<T>& gr, const Mat_t& go) {
            Mat_t gin(dtv.rows(), dtv.cols());
            for (Eigen::Index i = 0; i < dtv.rows(); ++i) {
                for (int e = 0; e < k; ++e) gin.row(i).segment(e * p, p) = dtv.row(i).segment(e * p, p) * go(i, e);
            }
            gr.accumulate(th, gin);
        });
    }
    o.log_density = g.logsumexp_rows(g.add(o.logp, o.log_w));
    return o;
}

template <typename T>
typename MagnetModel<T>::Losses MagnetModel<T>::loss(nn::Graph<T>& g, const Output& out,
                                                     std::span<const PreparedTrial* const> batch, double margin,
                                                     double lambda_div, bool hardest_negative) const {
    Losses l;
    const Mat_t& ld = g.value(out.log_density);
    const auto b = static_cast<Eigen::Index>(batch.size());
    Mat_t grad = Mat_t::Zero(ld.rows(), 1);
    double rank = 0.0;
    int lonely = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const PreparedTrial& t = *batch[static_cast<std::size_t>(i)];
        if (t.intended_row < 0) throw InputError("trial " + t.trial_id + " has no labelled target");
        const int begin = out.row_begin[static_cast<std::size_t>(i)];
        const int n = t.targets();
        if (n < 2) {
            ++lonely;
            continue;
        }
        const int pos = begin + t.intended_row;
        const double lp = static_cast<double>(ld(pos, 0));
        if (hardest_negative) {
            int neg = -1;
            for (int j = 0; j < n; ++j) {
                if (j == t.intended_row) continue;
                if (neg < 0 || ld(begin + j, 0) > ld(neg, 0)) neg = begin + j;
            }
            const double h = margin + static_cast<double>(ld(neg, 0)) - lp;
            if (h > 0.0) {
                rank += h;
                grad(neg, 0) += T(1);
                grad(pos, 0) -= T(1);
            }
        } else {
            const double inv = 1.0 / (n - 1);
            for (int j = 0; j < n; ++j) {
                if (j == t.intended_row) continue;
                const double h = margin + static_cast<double>(ld(begin + j, 0)) - lp;
                if (h > 0.0) {
                    rank += h * inv;
                    grad(begin + j, 0) += static_cast<T>(inv);
                    grad(pos, 0) -= static_cast<T>(inv);
                }
            }
        }
    }
    if (lonely > 0) spdlog::warn("{} single-target trial(s) contribute no ranking loss", lonely);
    rank /= static_cast<double>(b);
    grad /= static_cast<T>(b);
    Mat_t rank_v(1, 1);
    rank_v(0, 0) = static_cast<T>(rank);
    const nn::Var ld_var = out.log_density;
    const nn::Var rin[] = {ld_var};
    nn::Var rank_var = g.custom(rin, std::move(rank_v), [ld_var, grad = std::move(grad)](nn::Graph<T>& gr, const Mat_t& go) {
        gr.accumulate(ld_var, grad * go(0, 0));
    });
    l.rank = rank;

    const int k = experts();
    if (k < 2 || lambda_div == 0.0) {
        l.total = rank_var;
        return l;
    }
    // Cosine diversity over scale-normalized adapted parameters, averaged over rows.
    const int p = expert_width(dim());
    const Mat_t& th = g.value(out.theta);
    const Eigen::Index rows = th.rows();
    Mat_t dth = Mat_t::Zero(rows, k * p);
    const Eigen::Matrix<T, 1, Eigen::Dynamic> inv_scale = scale_.cwiseInverse().cast<T>();
    const T pair_norm = T(1) / static_cast<T>(k * (k - 1));
    double div = 0.0;
    bool zero_norm = false;
    for (Eigen::Index i = 0; i < rows; ++i) {
        std::vector<Eigen::Matrix<T, 1, Eigen::Dynamic>> u(static_cast<std::size_t>(k));
        std::vector<T> norms(static_cast<std::size_t>(k));
        for (int e = 0; e < k; ++e) {
            u[static_cast<std::size_t>(e)] = th.row(i).segment(e * p, p).cwiseProduct(inv_scale);
            norms[static_cast<std::size_t>(e)] = u[static_cast<std::size_t>(e)].norm();
        }
        for (int a = 0; a < k; ++a) {
            for (int c = a + 1; c < k; ++c) {
                const auto& ua = u[static_cast<std::size_t>(a)];
                const auto& uc = u[static_cast<std::size_t>(c)];
                const T na = norms[static_cast<std::size_t>(a)], nc = norms[static_cast<std::size_t>(c)];
                if (na == T(0) || nc == T(0)) {
                    zero_norm = true;
                    continue;
                }
                const T cs = ua.dot(uc) / (na * nc);
                div += static_cast<double>(T(2) * cs * pair_norm);
                // d cos / d ua = uc/(na nc) - cs ua / na^2, then chain through 1/scale.
                const T w = T(2) * pair_norm;
                dth.row(i).segment(a * p, p) += w * (uc / (na * nc) - cs * ua / (na * na)).cwiseProduct(inv_scale);
                dth.row(i).segment(c * p, p) += w * (ua / (na * nc) - cs * uc / (nc * nc)).cwiseProduct(inv_scale);
            }
        }
    }
    if (zero_norm) spdlog::warn("zero-norm adapted expert vector; its pairs contribute 0 to the diversity loss");
    div /= static_cast<double>(rows);
    dth /= static_cast<T>(rows);
    Mat_t div_v(1, 1);
    div_v(0, 0) = static_cast<T>(div);
    const nn::Var th_var = out.theta;
    const nn::Var din[] = {th_var};
    nn::Var div_var = g.custom(din, std::move(div_v), [th_var, dth = std::move(dth)](nn::Graph<T>& gr, const Mat_t& go) {
        gr.accumulate(th_var, dth * go(0, 0));
    });
    l.div = div;
    l.total = g.add(rank_var, g.scale(div_var, static_cast<T>(lambda_div)));
    return l;
}

template <typename T>
std::vector<PredictionRecord> MagnetModel<T>::predict(std::span<const PreparedTrial* const> batch) {
    nn::Graph<T> g;
    nn::Rng rng(0);
    const Output o = forward(g, batch, nn::Mode::eval, rng);
    const int k = experts();
    const int d = dim();
    const int p = expert_width(d);
    const Mat_t& logits = g.value(o.logits);
    const Mat_t& delta = g.value(o.delta);
    std::vector<PredictionRecord> out;
    out.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const PreparedTrial& t = *batch[b];
        PredictionRecord r;
        r.trial_id = t.trial_id;
        r.target_ids = t.target_ids;
        r.expert_ids = registry_.ids();
        r.zero_filled_env = t.zero_filled;
        r.weights.resize(t.targets(), k);
        for (int j = 0; j < t.targets(); ++j) {
            const Eigen::Index row = o.row_begin[b] + j;
            // Log-softmax in 64-bit from the network's logits.
            std::vector<double> z(static_cast<std::size_t>(k));
            double zmax = -std::numeric_limits<double>::infinity();
            for (int e = 0; e < k; ++e) {
                z[static_cast<std::size_t>(e)] = static_cast<double>(logits(row, e)) / cfg_.tau;
                zmax = std::max(zmax, z[static_cast<std::size_t>(e)]);
            }
            double zs = 0.0;
            for (double v : z) zs += std::exp(v - zmax);
            const double lse = zmax + std::log(zs);
            std::vector<double> log_w(static_cast<std::size_t>(k)), logp(static_cast<std::size_t>(k));
            const Eigen::RowVectorXd theta =
                adapt_flat(base_, scale_, delta.row(row).template cast<double>(), d, cfg_.rho_mu, cfg_.rho_sigma);
            std::vector<AxisMoments> moments;
            for (int e = 0; e < k; ++e) {
                log_w[static_cast<std::size_t>(e)] = z[static_cast<std::size_t>(e)] - lse;
                r.weights(j, e) = std::exp(log_w[static_cast<std::size_t>(e)]);
                const Eigen::RowVectorXd flat = theta.segment(e * p, p);
                logp[static_cast<std::size_t>(e)] =
                    local_log_pdf(flat, d, t.offsets.row(j).transpose(), t.speed(j), t.size(j));
                moments.push_back(ternary_moments(unflatten_params(flat, d), t.speed(j), t.size(j)));
            }
            r.log_density.push_back(mixture_log_density(log_w, logp));
            r.moments.push_back(std::move(moments));
        }
        r.ranked = rank_by_score(r.target_ids, r.log_density);
        out.push_back(std::move(r));
    }
    return out;
}

template <typename T>
PredictionRecord MagnetModel<T>::predict(const TrialRecord& t) {
    const PreparedTrial p = prepare(t);
    const PreparedTrial* one[] = {&p};
    return predict(std::span<const PreparedTrial* const>(one)).front();
}

template <typename T>
nlohmann::json MagnetModel<T>::metadata() const {
    return {{"kind", "magnet-model"},
            {"model", model_config_to_json(cfg_)},
            {"registry", registry_to_json(registry_)},
            {"vib_stats", series_stats_to_json(vib_stats_)},
            {"acc_stats", series_stats_to_json(acc_stats_)}};
}

template class MagnetModel<float>;
template class MagnetModel<double>;

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
nn::Checkpoint model_checkpoint(const MagnetModel<T>& m, nlohmann::json extra) {
    nlohmann::json meta = m.metadata();
    meta["extra"] = std::move(extra);
    return nn::pack_checkpoint<T>(m.params(), nullptr, std::move(meta));
}

template <typename T>
std::unique_ptr<MagnetModel<T>> model_from_checkpoint(const nn::Checkpoint& ck) {
    const auto& meta = ck.metadata;
    if (!meta.contains("kind") || meta["kind"] != "magnet-model") throw ParseError("checkpoint is not a model checkpoint");
    auto m = std::make_unique<MagnetModel<T>>(model_config_from_json(meta.at("model")), registry_from_json(meta.at("registry")),
                                              series_stats_from_json(meta.at("vib_stats")),
                                              series_stats_from_json(meta.at("acc_stats")), 0);
    nn::unpack_checkpoint<T>(ck, m->params(), nullptr);
    return m;
}

template nn::Checkpoint model_checkpoint<float>(const MagnetModel<float>&, nlohmann::json);
template nn::Checkpoint model_checkpoint<double>(const MagnetModel<double>&, nlohmann::json);
template std::unique_ptr<MagnetModel<float>> model_from_checkpoint<float>(const nn::Checkpoint&);
template std::unique_ptr<MagnetModel<double>> model_from_checkpoint<double>(const nn::Checkpoint&);

std::unique_ptr<MagnetModel<float>> load_model(const std::filesystem::path& path) {
    return model_from_checkpoint<float>(nn::load_checkpoint(path));
}

void save_model(const std::filesystem::path& path, const MagnetModel<float>& m, nlohmann::json extra) {
    nn::save_checkpoint(path, model_checkpoint(m, std::move(extra)));
}

}  // namespace magnet
