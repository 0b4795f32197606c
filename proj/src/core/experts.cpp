#include "magnet/experts.hpp"

#include "magnet/errors.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace magnet {

namespace {

std::string grid_string(const ConditionMoments& m) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        if (i) os << ", ";
        os << "(W=" << m.cells[i].w << ", V=" << m.cells[i].v << ")";
    }
    os << "}";
    return os.str();
}

// Least squares with column scaling; throws when the active design is rank deficient.
Vec solve_ls(const Mat& a, const Vec& b, const ConditionMoments& m) {
    Vec scale = a.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        if (scale(j) == 0.0) scale(j) = 1.0;
    }
    const Mat as = a * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Mat> qr(as);
    qr.setThreshold(1e-10);
    if (qr.rank() < as.cols()) {
        throw FittingError("rank-deficient design matrix (rank " + std::to_string(qr.rank()) +
                           " < " + std::to_string(as.cols()) + ") for condition grid " +
                           grid_string(m));
    }
    return qr.solve(b).cwiseQuotient(scale);
}

Mat read_block(const nlohmann::json& j, int dim, const std::string& field, const std::string& id) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim) {
        throw ParseError("expert '" + id + "': " + field + " must list " + std::to_string(dim) +
                         " axes");
    }
    Mat out(dim, 3);
    for (int d = 0; d < dim; ++d) {
        const auto& row = j[static_cast<std::size_t>(d)];
        if (!row.is_array() || row.size() != 3) {
            throw ParseError("expert '" + id + "': " + field + " rows need 3 coefficients");
        }
        for (int c = 0; c < 3; ++c) out(d, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return out;
}

nlohmann::json write_block(const Mat& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index d = 0; d < m.rows(); ++d) out.push_back({m(d, 0), m(d, 1), m(d, 2)});
    return out;
}

}  // namespace

ConditionMoments fit_condition_moments(const std::vector<EndpointSample>& samples, int min_count) {
    if (min_count < 2) throw ConfigError("min_count must be >= 2");
    ConditionMoments out;
    if (samples.empty()) throw InputError("fit_condition_moments: no samples");
    out.dim = static_cast<int>(samples.front().offset.size());
    std::map<std::pair<double, double>, std::vector<const Vec*>> groups;
    for (const auto& s : samples) {
        if (s.offset.size() != out.dim) {
            throw DimensionError("endpoint sample dims differ: " + std::to_string(s.offset.size()) +
                                 " vs " + std::to_string(out.dim));
        }
        groups[{s.w, s.v}].push_back(&s.offset);
    }
    for (const auto& [key, offs] : groups) {
        const int n = static_cast<int>(offs.size());
        if (n < 2) {
            std::ostringstream os;
            os << "cell (W=" << key.first << ", V=" << key.second << ") has " << n
               << " sample; dropped";
            out.warnings.push_back(os.str());
            continue;
        }
        CellMoments c;
        c.w = key.first;
        c.v = key.second;
        c.count = n;
        c.mean = Vec::Zero(out.dim);
        for (const Vec* o : offs) c.mean += *o;
        c.mean /= n;
        c.var = Vec::Zero(out.dim);
        for (const Vec* o : offs) c.var += (*o - c.mean).array().square().matrix();
        c.var /= (n - 1);
        c.low_confidence = n < min_count;
        c.degenerate = (c.var.array() <= 0.0).any();
        out.cells.push_back(std::move(c));
    }
    return out;
}

nlohmann::json FitProvenance::to_json() const {
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        cells.push_back({{"w", grid[i].first}, {"v", grid[i].second}, {"count", counts[i]}});
    }
    return {{"cells", cells},
            {"mean_residual_rms", std::vector<double>(mean_residual.data(), mean_residual.data() + mean_residual.size())},
            {"var_residual_rms", std::vector<double>(var_residual.data(), var_residual.data() + var_residual.size())}};
}

TernaryGaussianParams fit_ternary_params(const ConditionMoments& m, FitProvenance* provenance) {
    std::set<double> ws, vs;
    for (const auto& c : m.cells) {
        ws.insert(c.w);
        vs.insert(c.v);
    }
    if (m.cells.size() < 3 || ws.size() < 2 || vs.size() < 2) {
        throw FittingError("need >= 3 cells spanning >= 2 sizes and >= 2 speeds, got grid " +
                           grid_string(m));
    }
    const auto n = static_cast<Eigen::Index>(m.cells.size());
    Mat a_mu(n, 3), a_var(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& c = m.cells[static_cast<std::size_t>(i)];
        a_mu.row(i) << 1.0, c.v, c.w;
        a_var.row(i) << 1.0, c.v * c.v, c.w * c.w;
    }
    TernaryGaussianParams p(m.dim);
    Vec mean_res(m.dim), var_res(m.dim);
    for (int d = 0; d < m.dim; ++d) {
        Vec y_mu(n), y_var(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            y_mu(i) = m.cells[static_cast<std::size_t>(i)].mean(d);
            y_var(i) = m.cells[static_cast<std::size_t>(i)].var(d);
        }
        const Vec mu = solve_ls(a_mu, y_mu, m);
        p.mu.row(d) = mu.transpose();
        mean_res(d) = std::sqrt((a_mu * mu - y_mu).squaredNorm() / static_cast<double>(n));

        // Projection onto the nonnegative orthant: drop negative regressors and refit.
        std::vector<int> active = {0, 1, 2};
        Vec coef = Vec::Zero(3);
        while (!active.empty()) {
            Mat sub(n, static_cast<Eigen::Index>(active.size()));
            for (std::size_t k = 0; k < active.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = a_var.col(active[k]);
            const Vec sol = solve_ls(sub, y_var, m);
            std::vector<int> keep;
            for (std::size_t k = 0; k < active.size(); ++k) {
                if (sol(static_cast<Eigen::Index>(k)) >= 0.0) keep.push_back(active[k]);
            }
            if (keep.size() == active.size()) {
                coef.setZero();
                for (std::size_t k = 0; k < active.size(); ++k) coef(active[k]) = sol(static_cast<Eigen::Index>(k));
                break;
            }
            active = std::move(keep);
            coef.setZero();
        }
        p.sigma.row(d) = coef.cwiseSqrt().transpose();
        var_res(d) = std::sqrt((a_var * coef - y_var).squaredNorm() / static_cast<double>(n));
    }
    if (provenance != nullptr) {
        provenance->grid.clear();
        provenance->counts.clear();
        for (const auto& c : m.cells) {
            provenance->grid.emplace_back(c.w, c.v);
            provenance->counts.push_back(c.count);
        }
        provenance->mean_residual = mean_res;
        provenance->var_residual = var_res;
    }
    return p;
}

bool ExpertSpec::operator==(const ExpertSpec& o) const {
    return id == o.id && dim == o.dim && params.mu == o.params.mu &&
           params.sigma == o.params.sigma && provenance == o.provenance;
}

const ExpertSpec* ExpertRegistry::find(const std::string& id) const {
    for (const auto& e : experts) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

const ExpertSpec& ExpertRegistry::at(const std::string& id) const {
    const ExpertSpec* e = find(id);
    if (e == nullptr) throw InputError("unknown expert '" + id + "'");
    return *e;
}

std::vector<std::string> ExpertRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& e : experts) out.push_back(e.id);
    return out;
}

void ExpertRegistry::validate() const {
    std::set<std::string> seen;
    for (const auto& e : experts) {
        if (e.id.empty()) throw ValidationError("expert with empty id");
        if (!seen.insert(e.id).second) throw ValidationError("duplicate expert id '" + e.id + "'");
        if (e.params.dim() != e.dim) {
            throw ValidationError("expert '" + e.id + "' dim " + std::to_string(e.dim) +
                                  " does not match its coefficient rows");
        }
        try {
            e.params.validate();
        } catch (const std::exception& ex) {
            throw ValidationError("expert '" + e.id + "': " + ex.what());
        }
    }
}

nlohmann::json registry_to_json(const ExpertRegistry& r) {
    nlohmann::json out;
    out["schema_version"] = kRegistrySchemaVersion;
    out["units"] = {{"2d", "offsets px, speed px/s, size px (diameter)"},
                    {"3d", "offsets m, speed m/s, size m (radius)"},
                    {"coefficients", "per local axis [absolute, speed, size]; axes tangent, normal[, binormal]"}};
    out["experts"] = nlohmann::json::array();
    for (const auto& e : r.experts) {
        out["experts"].push_back({{"id", e.id},
                                  {"dim", e.dim},
                                  {"mu_coeffs", write_block(e.params.mu)},
                                  {"sigma_coeffs", write_block(e.params.sigma)},
                                  {"provenance", e.provenance}});
    }
    return out;
}

ExpertRegistry registry_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("schema_version")) {
        throw ParseError("expert registry: missing schema_version");
    }
    const auto version = j.at("schema_version");
    if (!version.is_number_integer() || version.get<int>() != kRegistrySchemaVersion) {
        throw ParseError("expert registry: schema_version " + version.dump() + " unsupported (expected " +
                         std::to_string(kRegistrySchemaVersion) + ")");
    }
    ExpertRegistry r;
    try {
        for (const auto& e : j.at("experts")) {
            ExpertSpec s;
            s.id = e.at("id").get<std::string>();
            s.dim = e.at("dim").get<int>();
            if (s.dim != 2 && s.dim != 3) throw ParseError("expert '" + s.id + "': dim must be 2 or 3");
            s.params.mu = read_block(e.at("mu_coeffs"), s.dim, "mu_coeffs", s.id);
            s.params.sigma = read_block(e.at("sigma_coeffs"), s.dim, "sigma_coeffs", s.id);
            s.provenance = e.value("provenance", nlohmann::json::object());
            r.experts.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("expert registry: ") + ex.what());
    }
    r.validate();
    return r;
}

void save_registry(const std::filesystem::path& path, const ExpertRegistry& r) {
    if (r.experts.empty()) throw ValidationError("refusing to save an empty expert registry");
    r.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << registry_to_json(r).dump(2) << "\n";
}

ExpertRegistry load_registry(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open expert registry " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError("expert registry " + path.string() + ": " + ex.what());
    }
    return registry_from_json(j);
}

}  // namespace magnet
