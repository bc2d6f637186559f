#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "entroflow/bridge.hpp"
#include "entroflow/densities.hpp"
#include "entroflow/diffusion.hpp"
#include "entroflow/functionals.hpp"
#include "entroflow/product_flow.hpp"
#include "entroflow/toml_subset.hpp"
#include "entroflow/transport.hpp"

namespace entroflow {

enum class ScenarioKind {
    fp_relaxation,
    product_flow,
    same_fp_decay,
    half_bridge_initial,
    half_bridge_final,
    full_bridge,
    omt_interpolation,
};

inline constexpr std::array<std::pair<ScenarioKind, std::string_view>, 7> kScenarioKinds{{
    {ScenarioKind::fp_relaxation, "fp-relaxation"},
    {ScenarioKind::product_flow, "product-flow"},
    {ScenarioKind::same_fp_decay, "same-fp-decay"},
    {ScenarioKind::half_bridge_initial, "half-bridge-initial"},
    {ScenarioKind::half_bridge_final, "half-bridge-final"},
    {ScenarioKind::full_bridge, "full-bridge"},
    {ScenarioKind::omt_interpolation, "omt-interpolation"},
}};

constexpr std::string_view to_string(ScenarioKind kind) noexcept
{
    for (const auto& [k, name] : kScenarioKinds)
        if (k == kind) return name;
    return "unknown";
}

inline std::optional<ScenarioKind> parse_kind(std::string_view name)
{
    for (const auto& [k, n] : kScenarioKinds)
        if (n == name) return k;
    return std::nullopt;
}

struct GridSpec {
    double x_min = -8.0;
    double x_max = 8.0;
    std::size_t n = 401;

    Grid1D make() const { return make_grid(x_min, x_max, n); }
};

struct TimeSpec {
    double t0 = 0.0;
    double t1 = 1.0;
    double dt = 1e-4;
    std::size_t stride = 10;

    std::size_t steps() const { return detail::step_count(t0, t1, dt); }
};

/// Prior drift by name: "ou" b+ = -k (x - c), "heat" b+ = 0,
/// "double-well" b+ = -depth x (x² - 1).
struct PriorSpec {
    std::string drift = "ou";
    double stiffness = 1.0;
    double center = 0.0;
    double depth = 1.0;
    double sigma2 = 2.0;

    DiffusionSpec diffusion() const
    {
        if (drift == "heat") return DiffusionSpec::heat(sigma2);
        if (drift == "double-well") {
            const double a = depth;
            return DiffusionSpec::gradient_drift([a](double x) { return a * x * (x * x - 1.0); }, sigma2);
        }
        return DiffusionSpec::ornstein_uhlenbeck(stiffness, center, sigma2);
    }

    /// H with b+ = -H'; none for the heat drift.
    std::optional<Hamiltonian> potential() const
    {
        if (drift == "heat") return std::nullopt;
        if (drift == "double-well") {
            const double a = depth;
            return Hamiltonian{[a](double x) { return 0.25 * a * (x * x - 1.0) * (x * x - 1.0); }};
        }
        const double k = stiffness, c = center;
        return Hamiltonian{[k, c](double x) { return 0.5 * k * (x - c) * (x - c); }};
    }

    /// θ = σ²/2, so that exp(-H/θ) is stationary.
    Temperature temperature() const { return Temperature(0.5 * sigma2); }
};

/// Named density family: gaussian(mean, variance), mixture of gaussians, uniform(a, b).
struct DensitySpec {
    std::string family = "gaussian";
    double mean = 0.0;
    double variance = 1.0;
    double a = 0.0;
    double b = 1.0;
    std::vector<densities::MixtureComponent> components;

    DensityField make(const Grid1D& g) const
    {
        if (family == "mixture") return densities::mixture(g, components);
        if (family == "uniform") return densities::uniform(g, a, b);
        return densities::gaussian(g, mean, variance);
    }
};

struct Scenario {
    std::string name;
    ScenarioKind kind = ScenarioKind::fp_relaxation;
    GridSpec grid;
    TimeSpec time;
    PriorSpec prior;
    std::map<std::string, DensitySpec> densities;
    std::string output;

    const DensitySpec& density(const std::string& role) const
    {
        const auto it = densities.find(role);
        if (it == densities.end()) fail(ErrorKind::config_error, "densities." + role + ": missing");
        return it->second;
    }
};

/// Density roles each kind reads: "initial" is the prior's (or first) initial law,
/// "tilde" the second initial law, "target" the terminal law.
inline std::vector<std::string> density_roles(ScenarioKind kind)
{
    switch (kind) {
    case ScenarioKind::fp_relaxation: return {"initial"};
    case ScenarioKind::product_flow:
    case ScenarioKind::same_fp_decay:
    case ScenarioKind::half_bridge_initial: return {"initial", "tilde"};
    case ScenarioKind::half_bridge_final:
    case ScenarioKind::full_bridge:
    case ScenarioKind::omt_interpolation: return {"initial", "target"};
    }
    return {};
}

namespace detail {

class ConfigReader {
public:
    std::vector<std::string> problems;

    void add(const std::string& path, const std::string& what) { problems.push_back(path + ": " + what); }

    bool object(const nlohmann::json& j, const std::string& path)
    {
        if (j.is_object()) return true;
        add(path, "must be a table");
        return false;
    }

    void known_keys(const nlohmann::json& t, const std::string& prefix, std::initializer_list<std::string_view> keys)
    {
        for (const auto& [k, v] : t.items())
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) add(join(prefix, k), "unknown key");
    }

    double real(const nlohmann::json& t, const std::string& prefix, const char* key, double fallback)
    {
        if (!t.contains(key)) return fallback;
        const nlohmann::json& v = t.at(key);
        if (!v.is_number()) {
            add(join(prefix, key), "must be a number");
            return fallback;
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) add(join(prefix, key), "must be finite");
        return d;
    }

    double required_real(const nlohmann::json& t, const std::string& prefix, const char* key)
    {
        if (!t.contains(key)) add(join(prefix, key), "missing");
        return real(t, prefix, key, std::numeric_limits<double>::quiet_NaN());
    }

    std::size_t count(const nlohmann::json& t, const std::string& prefix, const char* key, std::size_t fallback)
    {
        if (!t.contains(key)) return fallback;
        const nlohmann::json& v = t.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            add(join(prefix, key), "must be a nonnegative integer");
            return fallback;
        }
        return v.get<std::size_t>();
    }

    std::string text(const nlohmann::json& t, const std::string& prefix, const char* key, std::string fallback)
    {
        if (!t.contains(key)) return fallback;
        const nlohmann::json& v = t.at(key);
        if (!v.is_string()) {
            add(join(prefix, key), "must be a string");
            return fallback;
        }
        return v.get<std::string>();
    }

    static std::string join(const std::string& prefix, std::string_view key)
    {
        return prefix.empty() ? std::string(key) : prefix + "." + std::string(key);
    }
};

inline void read_grid(ConfigReader& r, const nlohmann::json& doc, GridSpec& g)
{
    if (!doc.contains("grid")) return;
    const nlohmann::json& t = doc.at("grid");
    if (!r.object(t, "grid")) return;
    r.known_keys(t, "grid", {"x_min", "x_max", "n"});
    g.x_min = r.real(t, "grid", "x_min", g.x_min);
    g.x_max = r.real(t, "grid", "x_max", g.x_max);
    g.n = r.count(t, "grid", "n", g.n);
    if (!(g.x_min < g.x_max)) r.add("grid.x_max", "must exceed grid.x_min");
    if (g.n < 8) r.add("grid.n", "must be at least 8");
}

inline void read_time(ConfigReader& r, const nlohmann::json& doc, TimeSpec& s)
{
    if (doc.contains("time")) {
        const nlohmann::json& t = doc.at("time");
        if (!r.object(t, "time")) return;
        r.known_keys(t, "time", {"t0", "t1", "dt", "stride"});
        s.t0 = r.real(t, "time", "t0", s.t0);
        s.t1 = r.real(t, "time", "t1", s.t1);
        s.dt = r.real(t, "time", "dt", s.dt);
        s.stride = r.count(t, "time", "stride", s.stride);
    }
    if (!(s.t0 < s.t1)) r.add("time.t1", "must exceed time.t0");
    if (!(s.dt > 0.0)) {
        r.add("time.dt", "must be positive");
        return;
    }
    if (s.stride == 0) r.add("time.stride", "must be positive");
    if (!(s.t0 < s.t1) || s.stride == 0) return;
    const double ratio = (s.t1 - s.t0) / s.dt;
    const auto steps = static_cast<std::size_t>(std::llround(ratio));
    if (steps == 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-6)
        r.add("time.dt", "must divide t1 - t0 into whole steps");
    else if (steps % s.stride != 0)
        r.add("time.stride", "must divide the step count " + std::to_string(steps));
}

inline void read_prior(ConfigReader& r, const nlohmann::json& doc, PriorSpec& p)
{
    if (!doc.contains("prior")) return;
    const nlohmann::json& t = doc.at("prior");
    if (!r.object(t, "prior")) return;
    r.known_keys(t, "prior", {"drift", "stiffness", "center", "depth", "sigma2"});
    p.drift = r.text(t, "prior", "drift", p.drift);
    p.stiffness = r.real(t, "prior", "stiffness", p.stiffness);
    p.center = r.real(t, "prior", "center", p.center);
    p.depth = r.real(t, "prior", "depth", p.depth);
    p.sigma2 = r.real(t, "prior", "sigma2", p.sigma2);
    if (p.drift != "ou" && p.drift != "heat" && p.drift != "double-well")
        r.add("prior.drift", "unknown drift '" + p.drift + "' (expected ou, heat or double-well)");
    if (!(p.sigma2 > 0.0)) r.add("prior.sigma2", "must be positive");
}

inline void read_density(ConfigReader& r, const nlohmann::json& t, const std::string& path, DensitySpec& d)
{
    if (!r.object(t, path)) return;
    d.family = r.text(t, path, "family", "");
    if (d.family == "gaussian") {
        r.known_keys(t, path, {"family", "mean", "variance"});
        d.mean = r.required_real(t, path, "mean");
        d.variance = r.required_real(t, path, "variance");
        if (!(d.variance > 0.0)) r.add(path + ".variance", "must be positive");
    } else if (d.family == "uniform") {
        r.known_keys(t, path, {"family", "a", "b"});
        d.a = r.required_real(t, path, "a");
        d.b = r.required_real(t, path, "b");
        if (!(d.a < d.b)) r.add(path + ".b", "must exceed a");
    } else if (d.family == "mixture") {
        r.known_keys(t, path, {"family", "components"});
        if (!t.contains("components") || !t.at("components").is_array() || t.at("components").empty()) {
            r.add(path + ".components", "must be a nonempty array of tables");
            return;
        }
        std::size_t i = 0;
        for (const nlohmann::json& c : t.at("components")) {
            const std::string cp = path + ".components[" + std::to_string(i++) + "]";
            if (!r.object(c, cp)) continue;
            r.known_keys(c, cp, {"weight", "mean", "variance"});
            densities::MixtureComponent m{r.required_real(c, cp, "weight"), r.required_real(c, cp, "mean"),
                                          r.required_real(c, cp, "variance")};
            if (!(m.weight > 0.0)) r.add(cp + ".weight", "must be positive");
            if (!(m.variance > 0.0)) r.add(cp + ".variance", "must be positive");
            d.components.push_back(m);
        }
    } else {
        r.add(path + ".family", d.family.empty() ? "missing" : "unknown family '" + d.family + "'");
    }
}

}  // namespace detail

/// Validates a parsed config document; every violation is reported in one
/// config-error, one line per field path.
inline Scenario parse_scenario(const nlohmann::json& doc)
{
    detail::ConfigReader r;
    Scenario s;
    if (!doc.is_object()) fail(ErrorKind::config_error, "document must be a table");
    r.known_keys(doc, "", {"name", "kind", "output", "grid", "time", "prior", "densities"});

    bool kind_ok = false;
    if (!doc.contains("kind")) {
        r.add("kind", "missing");
    } else if (!doc.at("kind").is_string()) {
        r.add("kind", "must be a string");
    } else if (const auto k = parse_kind(doc.at("kind").get<std::string>())) {
        s.kind = *k;
        kind_ok = true;
    } else {
        std::string known;
        for (const auto& [k2, n] : kScenarioKinds) known += (known.empty() ? "" : ", ") + std::string(n);
        r.add("kind", "unknown kind '" + doc.at("kind").get<std::string>() + "' (expected one of " + known + ")");
    }
    s.name = r.text(doc, "", "name", kind_ok ? std::string(to_string(s.kind)) : "scenario");
    s.output = r.text(doc, "", "output", "");

    detail::read_grid(r, doc, s.grid);
    detail::read_time(r, doc, s.time);
    detail::read_prior(r, doc, s.prior);

    if (doc.contains("densities") && r.object(doc.at("densities"), "densities")) {
        for (const auto& [role, t] : doc.at("densities").items()) {
            const std::string path = "densities." + role;
            if (role != "initial" && role != "tilde" && role != "target") {
                r.add(path, "unknown density role (expected initial, tilde or target)");
                continue;
            }
            detail::read_density(r, t, path, s.densities[role]);
        }
    }
    if (kind_ok) {
        const std::vector<std::string> roles = density_roles(s.kind);
        for (const std::string& role : roles)
            if (!s.densities.count(role)) r.add("densities." + role, "missing (required by " + std::string(to_string(s.kind)) + ")");
        for (const auto& [role, d] : s.densities)
            if (std::find(roles.begin(), roles.end(), role) == roles.end())
                r.add("densities." + role, "not used by " + std::string(to_string(s.kind)));
        if (s.kind == ScenarioKind::fp_relaxation) {
            if (s.prior.drift == "heat") r.add("prior.drift", "fp-relaxation needs a confining drift");
            if (s.prior.drift == "ou" && !(s.prior.stiffness > 0.0)) r.add("prior.stiffness", "must be positive");
            if (s.prior.drift == "double-well" && !(s.prior.depth > 0.0)) r.add("prior.depth", "must be positive");
        }
        if (s.kind == ScenarioKind::omt_interpolation && (s.time.t0 != 0.0 || s.time.t1 != 1.0))
            r.add("time", "omt-interpolation runs on t0 = 0, t1 = 1");
    }

    if (r.problems.empty()) {
        const Grid1D g = s.grid.make();
        std::map<std::string, DensityField> fields;
        for (const auto& [role, d] : s.densities) {
            try {
                fields.emplace(role, d.make(g));
            } catch (const Error& e) {
                r.add("densities." + role, e.message());
            }
        }
        if (r.problems.empty()) {
            if (s.kind == ScenarioKind::product_flow) {
                const double bound = product_flow_stable_dt({fields.at("tilde"), fields.at("initial")});
                if (s.time.dt > bound)
                    r.add("time.dt", "dt = " + format_real(s.time.dt) + " exceeds the stability bound " +
                                         format_real(bound));
            } else if (s.kind != ScenarioKind::omt_interpolation) {
                const double bound = stability_bound(s.prior.diffusion(), g, s.time.t0, s.time.t1);
                if (s.time.dt > bound)
                    r.add("time.dt", "dt = " + format_real(s.time.dt) + " exceeds the stability bound " +
                                         format_real(bound));
            }
        }
    }

    if (!r.problems.empty()) {
        std::string msg = "invalid scenario";
        for (const std::string& p : r.problems) msg += "\n  " + p;
        fail(ErrorKind::config_error, msg);
    }
    return s;
}

enum class ConfigFormat { toml, json };

inline Scenario parse_scenario(std::string_view text, ConfigFormat format)
{
    if (format == ConfigFormat::toml) return parse_scenario(toml::parse(text));
    try {
        return parse_scenario(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::config_error, e.what());
    }
}

inline std::optional<ConfigFormat> config_format(const std::filesystem::path& path)
{
    const std::string ext = path.extension().string();
    if (ext == ".toml") return ConfigFormat::toml;
    if (ext == ".json") return ConfigFormat::json;
    return std::nullopt;
}

/// Reads a .toml or .json scenario; the name defaults to the file stem.
inline Scenario load_scenario(const std::filesystem::path& path)
{
    const auto format = config_format(path);
    if (!format) fail(ErrorKind::config_error, path.string() + ": expected a .toml or .json file");
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io_error, "cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    nlohmann::json doc;
    try {
        doc = *format == ConfigFormat::toml ? toml::parse(text) : nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::config_error, path.string() + ": " + e.what());
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.message());
    }
    if (doc.is_object() && !doc.contains("name")) doc["name"] = path.stem().string();
    try {
        return parse_scenario(doc);
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.message());
    }
}

/// One stored frame. Rate columns are empty at the first and last frame.
struct SeriesRecord {
    double t = 0.0;
    double D = 0.0;
    std::optional<double> rate_predicted;
    std::optional<double> rate_measured;
    double fisher = 0.0;
    double mass_tilde = 0.0;
    double mass = 0.0;
    std::vector<double> extra;
};

struct Verdict {
    std::string name;
    bool pass = false;
    double residual = 0.0;
    double tolerance = 0.0;
};

struct RunResult {
    std::string scenario;
    ScenarioKind kind = ScenarioKind::fp_relaxation;
    std::vector<std::string> extra_columns;
    std::vector<SeriesRecord> series;
    std::vector<Verdict> verdicts;

    bool all_pass() const
    {
        return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
    }
};

namespace detail {

inline Verdict verdict(std::string name, double residual, double tolerance)
{
    return {std::move(name), std::isfinite(residual) && residual <= tolerance, residual, tolerance};
}

/// Fills the rate columns from per-frame predictions and centred differences of D.
inline void fill_rates(std::vector<SeriesRecord>& series, const std::vector<double>& predicted, double frame_dt)
{
    for (std::size_t k = 1; k + 1 < series.size(); ++k) {
        series[k].rate_predicted = predicted[k];
        series[k].rate_measured = (series[k + 1].D - series[k - 1].D) / (2.0 * frame_dt);
    }
}

/// Largest |predicted - measured| / |measured| over frames with D >= min_D and |measured| >= abs_floor.
inline double rate_error(const std::vector<SeriesRecord>& series, double min_D, double abs_floor)
{
    double worst = 0.0;
    for (const SeriesRecord& r : series) {
        if (!r.rate_measured || r.D < min_D || std::abs(*r.rate_measured) < abs_floor) continue;
        worst = std::max(worst, std::abs(*r.rate_predicted - *r.rate_measured) / std::abs(*r.rate_measured));
    }
    return worst;
}

inline double max_increase(const std::vector<SeriesRecord>& series)
{
    double worst = 0.0;
    for (std::size_t k = 1; k < series.size(); ++k) worst = std::max(worst, series[k].D - series[k - 1].D);
    return worst;
}

inline double max_decrease(const std::vector<SeriesRecord>& series)
{
    double worst = 0.0;
    for (std::size_t k = 1; k < series.size(); ++k) worst = std::max(worst, series[k - 1].D - series[k].D);
    return worst;
}

inline double max_mass_error(const std::vector<SeriesRecord>& series, double reference)
{
    double worst = 0.0;
    for (const SeriesRecord& r : series)
        worst = std::max({worst, std::abs(r.mass - reference), std::abs(r.mass_tilde - reference)});
    return worst;
}

inline double negativity(const DensityFlow& flow)
{
    double worst = 0.0;
    for (const DensityField& f : flow.frames)
        for (double v : f.values) worst = std::max(worst, -v);
    return worst;
}

inline double max_node_gap(std::span<const double> a, std::span<const double> b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline VectorField current_velocity(const DiffusionSpec& spec, const DensityField& rho, double t)
{
    return nelson_frame(spec, rho, t).v_current;
}

inline RunResult run_fp_relaxation(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DiffusionSpec spec = s.prior.diffusion();
    const Hamiltonian H = *s.prior.potential();
    const Temperature theta = s.prior.temperature();
    const DensityField rho0 = s.density("initial").make(g);
    const DensityField bar = boltzmann_density(H, theta, g).density;
    const DensityFlow flow = fp_solve(spec, rho0, s.time.t0, s.time.t1, s.time.dt, s.time.stride);

    RunResult out{s.name, s.kind, {"free_energy"}, {}, {}};
    std::vector<double> predicted;
    for (std::size_t k = 0; k < flow.frames.size(); ++k) {
        const DensityField& rho = flow.frames[k];
        const double fisher = relative_fisher(rho, bar);
        out.series.push_back({flow.time(k), relative_entropy(rho, bar), {}, {}, fisher, mass(bar), mass(rho),
                              {free_energy(H, rho, theta)}});
        predicted.push_back(-0.5 * s.prior.sigma2 * fisher);
    }
    fill_rates(out.series, predicted, flow.dt);
    double mass_err = 0.0;
    for (const SeriesRecord& r : out.series) mass_err = std::max(mass_err, std::abs(r.mass - 1.0));
    out.verdicts = {
        verdict("mass", mass_err, tolerances::mass),
        verdict("positivity", negativity(flow), tolerances::positivity),
        verdict("fe-dissipation", rate_error(out.series, tolerances::dissipation_min_D, 0.0),
                tolerances::dissipation_rate),
        verdict("monotone-decay", max_increase(out.series), tolerances::monotone_step),
        verdict("boltzmann-limit", out.series.back().D, tolerances::boltzmann_limit),
        verdict("gibbs-identity", free_energy_identity_gap(H, rho0, theta), tolerances::gibbs_identity),
    };
    return out;
}

inline RunResult run_product_flow(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const PairState s0{s.density("tilde").make(g), s.density("initial").make(g)};
    const auto traj = product_flow_trajectory(s0, s.time.dt, s.time.steps(), s.time.stride);
    const double frame_dt = s.time.dt * static_cast<double>(s.time.stride);

    RunResult out{s.name, s.kind, {"same_fp_rate", "cross_term"}, {}, {}};
    std::vector<double> predicted;
    double flux = 0.0, tendency = 0.0, sum_drift = 0.0, slower = 0.0, lyapunov = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const PairState& p = traj[k];
        const ReffDecomposition parts = reff_decomposition(p);
        const double reff = reff_rate(p);
        out.series.push_back({s.time.t0 + static_cast<double>(k) * frame_dt, relative_entropy(p.rho_tilde, p.rho), {},
                              {}, parts.fisher, mass(p.rho_tilde), mass(p.rho), {-parts.fisher, parts.cross}});
        predicted.push_back(reff);

        const ProductFluxes J = fluxes(p);
        double scale = 0.0, gap = 0.0;
        for (std::size_t i = 0; i < g.n; ++i) {
            scale = std::max(scale, std::abs(J.J1[i]));
            gap = std::max(gap, std::abs(J.J1[i] + J.J2[i]));
        }
        flux = std::max(flux, scale > 0.0 ? gap / scale : gap);
        const ProductTendency d = product_flow_tendency(p);
        for (std::size_t i = 0; i < g.n; ++i) {
            tendency = std::max(tendency, std::abs(d.d_rho_tilde[i] + d.d_rho[i]));
            sum_drift = std::max(sum_drift, std::abs(p.rho_tilde[i] + p.rho[i] - s0.rho_tilde[i] - s0.rho[i]));
        }
        slower = std::max(slower, reff + parts.fisher);
        if (k > 0 && out.series[k - 1].fisher >= tolerances::lyapunov_gradient_floor)
            lyapunov = std::max(lyapunov, out.series[k].D - out.series[k - 1].D);
    }
    fill_rates(out.series, predicted, frame_dt);
    double mass_err = 0.0;
    for (const SeriesRecord& r : out.series)
        mass_err = std::max({mass_err, std::abs(r.mass_tilde - out.series.front().mass_tilde),
                             std::abs(r.mass - out.series.front().mass)});
    out.verdicts = {
        verdict("opposite-flux", flux, tolerances::opposite_flux),
        verdict("opposite-tendency", tendency, tolerances::opposite_flux),
        verdict("reff-match", rate_error(out.series, tolerances::reff_min_D, tolerances::reff_abs_floor),
                tolerances::reff_rate),
        verdict("faster-than-same-fp", std::max(0.0, slower), tolerances::reff_decomposition),
        verdict("lyapunov", lyapunov, tolerances::lyapunov_increase),
        verdict("sum-conservation", sum_drift, tolerances::sum_field_drift),
        verdict("mass", mass_err, tolerances::product_mass),
    };
    return out;
}

inline RunResult run_same_fp_decay(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DiffusionSpec spec = s.prior.diffusion();
    const TimeSpec& T = s.time;
    const DensityFlow a = fp_solve(spec, s.density("tilde").make(g), T.t0, T.t1, T.dt, T.stride);
    const DensityFlow b = fp_solve(spec, s.density("initial").make(g), T.t0, T.t1, T.dt, T.stride);

    RunResult out{s.name, s.kind, {"pt2006_rate"}, {}, {}};
    std::vector<double> predicted;
    for (std::size_t k = 0; k < a.frames.size(); ++k) {
        const PairState p{a.frames[k], b.frames[k]};
        const double fisher = relative_fisher(p.rho_tilde, p.rho);
        const double pt = pt2006_rate(p, current_velocity(spec, p.rho_tilde, a.time(k)),
                                      current_velocity(spec, p.rho, b.time(k)));
        out.series.push_back({a.time(k), relative_entropy(p.rho_tilde, p.rho), {}, {}, fisher, mass(p.rho_tilde),
                              mass(p.rho), {pt}});
        predicted.push_back(-0.5 * spec.sigma2 * fisher);
    }
    fill_rates(out.series, predicted, a.dt);
    std::vector<SeriesRecord> pt_series = out.series;
    for (std::size_t k = 1; k + 1 < pt_series.size(); ++k) pt_series[k].rate_predicted = pt_series[k].extra[0];
    out.verdicts = {
        verdict("decay-rate", rate_error(out.series, tolerances::dissipation_min_D, 0.0), tolerances::dissipation_rate),
        verdict("pt2006-match", rate_error(pt_series, tolerances::dissipation_min_D, 0.0), tolerances::pt2006_rate),
        verdict("monotone-decay", max_increase(out.series), tolerances::monotone_step),
        verdict("mass", max_mass_error(out.series, 1.0), tolerances::mass),
        verdict("positivity", std::max(negativity(a), negativity(b)), tolerances::positivity),
    };
    return out;
}

inline RunResult run_half_bridge_initial(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DiffusionSpec spec = s.prior.diffusion();
    const TimeSpec& T = s.time;
    const DensityFlow prior = fp_solve(spec, s.density("initial").make(g), T.t0, T.t1, T.dt, T.stride);
    const BridgeSolution sol = half_bridge_initial(spec, prior, s.density("tilde").make(g), T.dt);

    RunResult out{s.name, s.kind, {"decay_rate"}, {}, {}};
    std::vector<double> predicted;
    const VectorField zero{g, std::vector<double>(g.n, 0.0)};
    double reduction = 0.0;
    for (std::size_t k = 0; k < prior.frames.size(); ++k) {
        const DensityField& ru = sol.controlled_flow.frames[k];
        const DensityField& r = prior.frames[k];
        const double fisher = relative_fisher(ru, r);
        const double decay = -0.5 * spec.sigma2 * fisher;
        const double pt = ptcontr_rate(ru, r, zero, spec.sigma2);
        reduction = std::max(reduction, std::abs(pt - decay));
        out.series.push_back({prior.time(k), relative_entropy(ru, r), {}, {}, fisher, mass(ru), mass(r), {decay}});
        predicted.push_back(pt);
    }
    fill_rates(out.series, predicted, prior.dt);
    out.verdicts = {
        verdict("decay-rate", rate_error(out.series, tolerances::dissipation_min_D, 0.0), tolerances::dissipation_rate),
        verdict("monotone-decay", max_increase(out.series), tolerances::entropy_monotone),
        verdict("ptcontr-reduction", reduction, tolerances::ptcontr_reduction),
        verdict("mass", max_mass_error(out.series, 1.0), tolerances::mass),
    };
    return out;
}

inline RunResult run_half_bridge_final(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DiffusionSpec spec = s.prior.diffusion();
    const TimeSpec& T = s.time;
    const DensityField target = s.density("target").make(g);
    const DensityFlow prior = fp_solve(spec, s.density("initial").make(g), T.t0, T.t1, T.dt, T.stride);
    const BridgeSolution sol = half_bridge_final(spec, prior, target, T.dt);

    RunResult out{s.name, s.kind, {"phi_normalization"}, {}, {}};
    std::vector<double> predicted;
    double factorization = 0.0, drift_gap = 0.0;
    std::vector<double> f(g.n);
    for (std::size_t k = 0; k < prior.frames.size(); ++k) {
        const DensityField& rp = sol.controlled_flow.frames[k];
        const DensityField& r = prior.frames[k];
        for (std::size_t i = 0; i < g.n; ++i) {
            f[i] = sol.phi[k][i] * r[i];
            factorization = std::max(factorization, std::abs(rp[i] - f[i]));
        }
        out.series.push_back({prior.time(k), relative_entropy(rp, r), {}, {}, relative_fisher(rp, r), mass(rp),
                              mass(r), {integrate(f, g)}});
        predicted.push_back(bridge_entropy_rate(sol, k, spec.sigma2));

        if (k == 0 || k + 1 == prior.frames.size()) continue;
        const double t = prior.time(k);
        const DiffusionSpec controlled{[&](double x, double tt) { return spec.b_plus(x, tt) + sol.control(x, tt); },
                                       spec.sigma2, false};
        const KinematicsFrame bridged = nelson_frame(controlled, rp, t);
        const KinematicsFrame plain = nelson_frame(spec, r, t);
        const double peak_p = *std::max_element(rp.values.begin(), rp.values.end());
        const double peak = *std::max_element(r.values.begin(), r.values.end());
        for (std::size_t i = 0; i < g.n; ++i)
            if (rp[i] >= 1e-3 * peak_p && r[i] >= 1e-3 * peak)
                drift_gap = std::max(drift_gap, std::abs(bridged.b_minus[i] - plain.b_minus[i]));
    }
    fill_rates(out.series, predicted, prior.dt);

    double martingale = 0.0;
    for (const SeriesRecord& rec : out.series)
        martingale = std::max(martingale, std::abs(rec.extra[0] - out.series.back().extra[0]));
    const DensityFlow replay =
        controlled_fp_solve(spec, sol.control, sol.controlled_flow.frames.front(), T.t0, T.t1, T.dt, T.stride);
    double consistency = 0.0;
    for (std::size_t k = 0; k < replay.frames.size(); ++k)
        consistency = std::max(consistency, max_node_gap(replay.frames[k].values, sol.controlled_flow.frames[k].values));

    out.verdicts = {
        verdict("h-theorem", max_decrease(out.series), tolerances::entropy_monotone),
        verdict("bridge-rate", rate_error(out.series, 0.0, tolerances::rate_abs_floor), tolerances::bridge_rate),
        verdict("terminal-entropy", std::abs(out.series.back().D - relative_entropy(target, prior.frames.back())),
                tolerances::terminal_entropy),
        verdict("terminal-marginal", max_node_gap(sol.controlled_flow.frames.back().values, target.values),
                tolerances::terminal_marginal),
        verdict("factorization", factorization, tolerances::factorization),
        verdict("martingale", martingale, tolerances::martingale_normalization),
        verdict("control-consistency", consistency, tolerances::bridge_consistency),
        verdict("same-backward-drift", drift_gap, tolerances::same_backward_drift),
    };
    return out;
}

inline RunResult run_full_bridge(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DiffusionSpec spec = s.prior.diffusion();
    const TimeSpec& T = s.time;
    const std::vector<double> w = g.weights();
    const DensityField rho0 = s.density("initial").make(g);
    const DensityField rho1 = s.density("target").make(g);
    std::vector<double> p0(g.n), p1(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        p0[i] = w[i] * rho0[i];
        p1[i] = w[i] * rho1[i];
    }
    const Eigen::MatrixXd K = prior_kernel(spec, g, T.t0, T.t1, T.dt);
    const SchroedingerSystem sys = fortet_solve(K, p0, p1);
    const EntropicInterpolation ei = entropic_interpolation(sys, spec, g, T.t0, T.t1, T.dt, T.stride);
    const DensityFlow prior = fp_solve(spec, rho0, T.t0, T.t1, T.dt, T.stride);

    RunResult out{s.name, s.kind, {"w2_to_displacement"}, {}, {}};
    std::vector<double> predicted;
    double mass_err = 0.0;
    for (std::size_t k = 0; k < ei.flow.frames.size(); ++k) {
        const DensityField& rs = ei.flow.frames[k];
        const DensityField& r = prior.frames[k];
        VectorField u = gradient(floored_log(ei.phi[k]), g);
        for (double& v : u.values) v *= spec.sigma2;
        const double tau = (ei.flow.time(k) - T.t0) / (T.t1 - T.t0);
        const double gap = w2_distance(rs, displacement_interpolate(rho0, rho1, std::clamp(tau, 0.0, 1.0)));
        out.series.push_back({ei.flow.time(k), relative_entropy(rs, r), {}, {}, relative_fisher(rs, r), mass(rs),
                              mass(r), {gap}});
        predicted.push_back(ptcontr_rate(rs, r, u, spec.sigma2));
        mass_err = std::max(mass_err, std::abs(mass(rs) - 1.0));
    }
    fill_rates(out.series, predicted, ei.flow.dt);

    double row_sum = 0.0;
    for (Eigen::Index i = 0; i < K.rows(); ++i) row_sum = std::max(row_sum, std::abs(K.row(i).sum() - 1.0));
    double history = 0.0;
    for (std::size_t k = 1; k < sys.residual_history.size(); ++k)
        history = std::max(history, sys.residual_history[k] - sys.residual_history[k - 1]);
    double e0 = 0.0, e1 = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) {
        e0 += std::abs(w[i] * ei.flow.frames.front()[i] - p0[i]);
        e1 += std::abs(w[i] * ei.flow.frames.back()[i] - p1[i]);
    }
    out.verdicts = {
        verdict("kernel-stochastic", row_sum, tolerances::kernel_row_sum),
        verdict("fortet-residual", sys.residual, tolerances::fortet_tol),
        verdict("fortet-monotone", history, tolerances::fortet_monotone),
        verdict("endpoint-marginals", std::max(e0, e1), tolerances::endpoint_marginal),
        verdict("interpolation-mass", mass_err, tolerances::interpolation_mass),
        verdict("ptcontr-match", rate_error(out.series, tolerances::dissipation_min_D, tolerances::rate_abs_floor),
                tolerances::ptcontr_rate),
    };
    return out;
}

inline RunResult run_omt_interpolation(const Scenario& s)
{
    const Grid1D g = s.grid.make();
    const DensityField nu0 = s.density("initial").make(g);
    const DensityField nu1 = s.density("target").make(g);
    const std::size_t intervals = s.time.steps() / s.time.stride;
    const DisplacementPath path = displacement_flow(nu0, nu1, intervals);
    const double W = w2_distance(nu0, nu1);
    const VectorField still{g, std::vector<double>(g.n, 0.0)};

    RunResult out{s.name, s.kind, {"w2_from_start", "neg_entropy"}, {}, {}};
    std::vector<double> predicted;
    double speed = 0.0;
    for (std::size_t k = 0; k < path.flow.frames.size(); ++k) {
        const DensityField& mu = path.flow.frames[k];
        const double t = path.flow.time(k);
        const double w2 = w2_distance(mu, nu0);
        speed = std::max(speed, std::abs(w2 - t * W));
        out.series.push_back({t, relative_entropy(mu, nu1), {}, {}, relative_fisher(mu, nu1), mass(mu), mass(nu1),
                              {w2, -entropy(mu)}});
        predicted.push_back(pt2006_rate({mu, nu1}, path.velocities[k], still));
    }
    fill_rates(out.series, predicted, path.flow.dt);

    double convexity = 0.0;
    for (std::size_t k = 1; k + 1 < out.series.size(); ++k)
        convexity = std::max(convexity, -(out.series[k + 1].extra[1] - 2.0 * out.series[k].extra[1] +
                                          out.series[k - 1].extra[1]));
    const double action = benamou_brenier_action(path.flow, path.velocities);
    const double bb = W > 0.0 ? std::abs(action / (W * W) - 1.0) : action;
    const double ends = std::max(max_node_gap(path.flow.frames.front().values, nu0.values),
                                 max_node_gap(path.flow.frames.back().values, nu1.values));
    out.verdicts = {
        verdict("endpoints", ends, tolerances::displacement_endpoint),
        verdict("constant-speed", speed, tolerances::constant_speed),
        verdict("benamou-brenier", bb, tolerances::benamou_brenier_relative),
        verdict("displacement-convexity", convexity, tolerances::displacement_convexity),
        verdict("pt2006-match", rate_error(out.series, tolerances::dissipation_min_D, tolerances::rate_abs_floor),
                tolerances::pt2006_rate),
    };
    return out;
}

}  // namespace detail

/// Runs one validated scenario. Output is a pure function of the scenario.
inline RunResult run_scenario(const Scenario& s)
{
    try {
        switch (s.kind) {
        case ScenarioKind::fp_relaxation: return detail::run_fp_relaxation(s);
        case ScenarioKind::product_flow: return detail::run_product_flow(s);
        case ScenarioKind::same_fp_decay: return detail::run_same_fp_decay(s);
        case ScenarioKind::half_bridge_initial: return detail::run_half_bridge_initial(s);
        case ScenarioKind::half_bridge_final: return detail::run_half_bridge_final(s);
        case ScenarioKind::full_bridge: return detail::run_full_bridge(s);
        case ScenarioKind::omt_interpolation: return detail::run_omt_interpolation(s);
        }
    } catch (const Error& e) {
        fail(e.kind(), "scenario '" + s.name + "': " + e.message());
    }
    fail(ErrorKind::invalid_argument, "unknown scenario kind");
}

namespace detail {

inline std::string csv_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// RFC-4180 field: quoted when it holds a comma, quote or line break.
inline std::string csv_field(std::string_view s)
{
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::vector<std::string> csv_columns(const RunResult& r)
{
    std::vector<std::string> cols{"t", "D", "rate_predicted", "rate_measured", "fisher", "mass_tilde", "mass"};
    cols.insert(cols.end(), r.extra_columns.begin(), r.extra_columns.end());
    return cols;
}

/// Series as CSV with CRLF line ends; floats carry 17 significant digits.
inline std::string series_csv(const RunResult& r)
{
    std::string out;
    const std::vector<std::string> cols = csv_columns(r);
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + detail::csv_field(cols[i]);
    out += "\r\n";
    for (const SeriesRecord& rec : r.series) {
        out += detail::csv_real(rec.t) + "," + detail::csv_real(rec.D) + ",";
        out += (rec.rate_predicted ? detail::csv_real(*rec.rate_predicted) : "") + ",";
        out += (rec.rate_measured ? detail::csv_real(*rec.rate_measured) : "") + ",";
        out += detail::csv_real(rec.fisher) + "," + detail::csv_real(rec.mass_tilde) + "," + detail::csv_real(rec.mass);
        for (double v : rec.extra) out += "," + detail::csv_real(v);
        out += "\r\n";
    }
    return out;
}

/// {"scenario", "kind", "pass", "verdicts": [{"name", "pass", "residual", "tolerance"}]}.
inline nlohmann::json verdict_json(const RunResult& r)
{
    nlohmann::json list = nlohmann::json::array();
    for (const Verdict& v : r.verdicts) {
        nlohmann::json residual = std::isfinite(v.residual) ? nlohmann::json(v.residual) : nlohmann::json(nullptr);
        list.push_back({{"name", v.name}, {"pass", v.pass}, {"residual", residual}, {"tolerance", v.tolerance}});
    }
    return {{"scenario", r.scenario}, {"kind", std::string(to_string(r.kind))}, {"pass", r.all_pass()},
            {"verdicts", list}};
}

struct OutputPaths {
    std::filesystem::path csv;
    std::filesystem::path json;
};

/// Writes <prefix>.csv and <prefix>.json, creating parent directories.
inline OutputPaths write_outputs(const RunResult& r, const std::filesystem::path& prefix)
{
    OutputPaths paths{prefix, prefix};
    paths.csv += ".csv";
    paths.json += ".json";
    try {
        if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    } catch (const std::filesystem::filesystem_error& e) {
        fail(ErrorKind::io_error, e.what());
    }
    auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorKind::io_error, "cannot open " + p.string() + " for writing");
        f << text;
        if (!f.flush()) fail(ErrorKind::io_error, "write to " + p.string() + " failed");
    };
    write(paths.csv, series_csv(r));
    write(paths.json, verdict_json(r).dump(2) + "\n");
    return paths;
}

}  // namespace entroflow
