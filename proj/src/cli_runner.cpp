#include "gnflow/cli_runner.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace gnflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema v1

namespace {

class Reader {
public:
    explicit Reader(const std::string& text) : text_(text) {}

    [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const
    {
        std::string where;
        for (const auto& p : path) where += (where.empty() ? "" : ".") + p;
        std::ostringstream out;
        out << "config";
        if (const int line = line_of(path); line > 0) out << " line " << line;
        if (!where.empty()) out << " (" << where << ")";
        out << ": " << msg;
        throw ConfigError(out.str());
    }

    const json& object(const json& j, const std::vector<std::string>& path,
                       std::initializer_list<const char*> allowed) const
    {
        if (!j.is_object()) fail(path, "expected an object");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (!ok.count(key)) {
                auto p = path;
                p.push_back(key);
                fail(p, "unknown key '" + key + "'");
            }
        }
        return j;
    }

    double number(const json& parent, const std::vector<std::string>& path, const char* key,
                  std::optional<double> fallback = std::nullopt) const
    {
        auto p = path;
        p.push_back(key);
        if (!parent.contains(key)) {
            if (fallback) return *fallback;
            fail(p, std::string("missing required key '") + key + "'");
        }
        const auto& v = parent.at(key);
        if (!v.is_number()) fail(p, "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(p, "must be finite");
        return x;
    }

    long long integer(const json& parent, const std::vector<std::string>& path, const char* key,
                      std::optional<long long> fallback = std::nullopt) const
    {
        auto p = path;
        p.push_back(key);
        if (!parent.contains(key)) {
            if (fallback) return *fallback;
            fail(p, std::string("missing required key '") + key + "'");
        }
        const auto& v = parent.at(key);
        if (!v.is_number_integer()) fail(p, "expected an integer");
        return v.get<long long>();
    }

    std::vector<double> numbers(const json& parent, const std::vector<std::string>& path, const char* key) const
    {
        auto p = path;
        p.push_back(key);
        if (!parent.contains(key)) fail(p, std::string("missing required key '") + key + "'");
        const auto& v = parent.at(key);
        if (!v.is_array() || v.empty()) fail(p, "expected a nonempty array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) fail(p, "expected a nonempty array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    int line_of(const std::vector<std::string>& path) const
    {
        std::size_t pos = 0;
        bool any = false;
        for (const auto& seg : path) {
            const auto found = text_.find("\"" + seg + "\"", pos);
            if (found == std::string::npos) continue;
            pos = found;
            any = true;
        }
        if (!any) return 0;
        return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(pos), '\n'));
    }

private:
    const std::string& text_;
};

ProfileKind profile_kind(const Reader& r, const std::vector<std::string>& path, const std::string& s)
{
    if (s == "constant") return ProfileKind::constant;
    if (s == "sine") return ProfileKind::sine;
    if (s == "cosine") return ProfileKind::cosine;
    if (s == "bump") return ProfileKind::bump;
    r.fail(path, "profile must be one of constant, sine, cosine, bump");
}

} // namespace

ForcingSignal ExperimentConfig::forcing() const { return ForcingSignal(domain, period, forcing_terms, shutoff); }

PeriodicProblem ExperimentConfig::problem() const
{
    return {domain, stress, reg, forcing(), grid_factor, integrator};
}

ExperimentConfig parse_config(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto byte = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
        throw ConfigError("config line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    Reader r(text);
    ExperimentConfig c;
    c.source = doc;
    r.object(doc, {}, {"schema_version", "domain", "rheology", "regularization", "forcing", "grid_factor",
                       "integrator", "solver", "embedding", "extinction", "sweep", "seed", "output"});
    if (r.integer(doc, {}, "schema_version") != kSchemaVersion)
        r.fail({"schema_version"}, "unsupported schema version (expected 1)");

    auto section = [&](const char* key, bool required, std::initializer_list<const char*> allowed) -> const json* {
        if (!doc.contains(key)) {
            if (required) r.fail({key}, std::string("missing required section '") + key + "'");
            return nullptr;
        }
        return &r.object(doc.at(key), {key}, allowed);
    };

    // domain
    const json& d = *section("domain", true, {"dimension", "side_length", "n_max"});
    c.domain.dimension = static_cast<int>(r.integer(d, {"domain"}, "dimension"));
    c.domain.side_length = r.number(d, {"domain"}, "side_length");
    c.domain.mode_cutoff = static_cast<int>(r.integer(d, {"domain"}, "n_max"));
    try {
        c.domain.validate();
    } catch (const InvalidInput& e) {
        r.fail({"domain"}, e.what());
    }

    // rheology
    const json& rh = *section("rheology", true, {"q", "kappa"});
    c.stress.q = r.number(rh, {"rheology"}, "q");
    c.stress.kappa = r.number(rh, {"rheology"}, "kappa");
    if (!(c.stress.q > kMinPowerLawIndex)) r.fail({"rheology", "q"}, "q must satisfy q > 6/5");
    if (!(c.stress.kappa >= 0.0)) r.fail({"rheology", "kappa"}, "kappa must be >= 0");

    const json& rg = *section("regularization", true, {"epsilon"});
    c.reg.epsilon = r.number(rg, {"regularization"}, "epsilon");
    if (!(c.reg.epsilon >= 0.0)) r.fail({"regularization", "epsilon"}, "epsilon must be >= 0");

    // forcing
    const json& f = *section("forcing", true, {"period", "shutoff", "terms"});
    c.period = r.number(f, {"forcing"}, "period");
    if (!(c.period > 0.0)) r.fail({"forcing", "period"}, "period T must be > 0");
    if (f.contains("shutoff")) c.shutoff = r.number(f, {"forcing"}, "shutoff");
    if (!f.contains("terms") || !f.at("terms").is_array())
        r.fail({"forcing", "terms"}, "expected an array of forcing terms");
    for (const auto& t : f.at("terms")) {
        const std::vector<std::string> tp{"forcing", "terms"};
        r.object(t, tp, {"k", "polarization", "amplitude", "profile", "harmonic", "phase"});
        ForcingTerm term;
        if (!t.contains("k") || !t.at("k").is_array() ||
            t.at("k").size() != static_cast<std::size_t>(c.domain.dimension))
            r.fail({"forcing", "terms", "k"}, "k must be an integer array of length d");
        for (std::size_t i = 0; i < t.at("k").size(); ++i) {
            if (!t.at("k")[i].is_number_integer()) r.fail({"forcing", "terms", "k"}, "k must hold integers");
            term.k[i] = t.at("k")[i].get<int>();
        }
        term.polarization = static_cast<int>(r.integer(t, tp, "polarization", 0));
        if (!t.contains("amplitude")) r.fail({"forcing", "terms", "amplitude"}, "missing required key 'amplitude'");
        const auto& a = t.at("amplitude");
        if (a.is_number()) {
            term.amplitude = a.get<double>();
        } else if (a.is_array() && a.size() == 2 && a[0].is_number() && a[1].is_number()) {
            term.amplitude = {a[0].get<double>(), a[1].get<double>()};
        } else {
            r.fail({"forcing", "terms", "amplitude"}, "amplitude must be a number or [re, im]");
        }
        if (t.contains("profile")) {
            if (!t.at("profile").is_string()) r.fail({"forcing", "terms", "profile"}, "expected a string");
            term.profile.kind = profile_kind(r, {"forcing", "terms", "profile"}, t.at("profile").get<std::string>());
        }
        term.profile.harmonic = static_cast<int>(r.integer(t, tp, "harmonic", 1));
        term.profile.phase = r.number(t, tp, "phase", 0.0);
        if (!in_half_space(term.k, c.domain.dimension))
            r.fail({"forcing", "terms", "k"}, "k must be nonzero with its first nonzero component positive");
        c.forcing_terms.push_back(term);
    }
    try {
        (void)c.forcing();
    } catch (const InvalidInput& e) {
        r.fail({"forcing"}, e.what());
    }

    if (doc.contains("grid_factor")) {
        c.grid_factor = r.number(doc, {}, "grid_factor");
        if (!(c.grid_factor >= 1.0)) r.fail({"grid_factor"}, "grid_factor must be >= 1");
    }

    if (const json* in = section("integrator", false,
                                 {"rel_tol", "abs_tol", "max_dt", "min_dt", "scheme", "samples", "clamp_threshold",
                                  "max_steps"})) {
        auto& ic = c.integrator;
        const std::vector<std::string> p{"integrator"};
        ic.rel_tol = r.number(*in, p, "rel_tol", ic.rel_tol);
        ic.abs_tol = r.number(*in, p, "abs_tol", ic.abs_tol);
        ic.max_dt = r.number(*in, p, "max_dt", ic.max_dt);
        ic.min_dt = r.number(*in, p, "min_dt", ic.min_dt);
        ic.samples = static_cast<int>(r.integer(*in, p, "samples", ic.samples));
        ic.clamp_threshold = r.number(*in, p, "clamp_threshold", ic.clamp_threshold);
        const long long steps = r.integer(*in, p, "max_steps", static_cast<long long>(ic.max_steps));
        if (steps <= 0) r.fail({"integrator", "max_steps"}, "max_steps must be positive");
        ic.max_steps = static_cast<std::size_t>(steps);
        if (in->contains("scheme")) {
            const auto& s = in->at("scheme");
            if (s == "imex_stiff") ic.scheme = Scheme::imex_stiff;
            else if (s == "explicit_adaptive") ic.scheme = Scheme::explicit_adaptive;
            else r.fail({"integrator", "scheme"}, "scheme must be imex_stiff or explicit_adaptive");
        }
        try {
            ic.validate();
        } catch (const InvalidInput& e) {
            r.fail(p, e.what());
        }
    }

    if (const json* so = section("solver", false,
                                 {"tolerance", "picard_iterations", "anderson_iterations", "anderson_window",
                                  "newton_iterations", "gmres_restart", "restarts"})) {
        auto& sc = c.solver;
        const std::vector<std::string> p{"solver"};
        sc.tolerance = r.number(*so, p, "tolerance", sc.tolerance);
        auto count = [&](const char* key, int& field, long long min) {
            const long long v = r.integer(*so, p, key, field);
            if (v < min) r.fail({"solver", key}, "must be >= " + std::to_string(min));
            field = static_cast<int>(v);
        };
        count("picard_iterations", sc.picard_iterations, 0);
        count("anderson_iterations", sc.anderson_iterations, 0);
        count("anderson_window", sc.anderson_window, 1);
        count("newton_iterations", sc.newton_iterations, 0);
        count("gmres_restart", sc.gmres_restart, 1);
        count("restarts", sc.restarts, 0);
    }

    if (const json* e = section("embedding", false, {"budget"})) {
        const long long b = r.integer(*e, {"embedding"}, "budget", 400);
        if (b < 100) r.fail({"embedding", "budget"}, "sample budget must be >= 100");
        c.embedding_budget = static_cast<std::size_t>(b);
    }
    if (const json* e = section("extinction", false, {"threshold_rel"})) {
        c.extinction_threshold = r.number(*e, {"extinction"}, "threshold_rel", 1e-10);
        if (!(c.extinction_threshold > 0.0)) r.fail({"extinction", "threshold_rel"}, "must be > 0");
    }
    if (const json* s = section("sweep", false, {"n_max", "epsilon", "kappa"})) {
        SweepAxes ax;
        for (double n : r.numbers(*s, {"sweep"}, "n_max")) {
            if (n != std::floor(n) || n < 1) r.fail({"sweep", "n_max"}, "n_max levels must be integers >= 1");
            ax.n_max.push_back(static_cast<int>(n));
        }
        ax.epsilon = r.numbers(*s, {"sweep"}, "epsilon");
        ax.kappa = r.numbers(*s, {"sweep"}, "kappa");
        for (double e : ax.epsilon)
            if (!(e >= 0.0)) r.fail({"sweep", "epsilon"}, "epsilon levels must be >= 0");
        for (double k : ax.kappa)
            if (!(k >= 0.0)) r.fail({"sweep", "kappa"}, "kappa levels must be >= 0");
        c.sweep = ax;
    }
    if (doc.contains("seed")) {
        if (!doc.at("seed").is_number_unsigned()) r.fail({"seed"}, "seed must be a nonnegative integer");
        c.seed = doc.at("seed").get<std::uint64_t>();
    }
    if (doc.contains("output")) {
        if (!doc.at("output").is_string()) r.fail({"output"}, "output must be a string");
        c.output = doc.at("output").get<std::string>();
    }
    return c;
}

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return out.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

void rebuild_from_steps(TrajectoryRecord& rec, const ForcingSignal& forcing, const StressParams& stress)
{
    rec.q = stress.q;
    rec.kappa = stress.kappa;
    const double dual = stress.dual_exponent();
    rec.samples.clear();
    rec.max_norm = 0.0;
    CumulativeTerms c;
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
        auto& e = rec.steps[i].energy;
        e.forcing_norm = forcing.l2_norm(rec.steps[i].t);
        if (i > 0) {
            const auto& a = rec.steps[i - 1].energy;
            const double w = 0.5 * (rec.steps[i].t - rec.steps[i - 1].t);
            c.dissipation_q += w * (a.dissipation_q + e.dissipation_q);
            c.dissipation_lap += w * (a.dissipation_lap + e.dissipation_lap);
            c.dissipation_p += w * (a.dissipation_p + e.dissipation_p);
            c.power_in += w * (a.power_in + e.power_in);
            c.forcing_dual += w * (std::pow(a.forcing_norm, dual) + std::pow(e.forcing_norm, dual));
        }
        const double n = std::sqrt(std::max(e.kinetic, 0.0));
        rec.max_norm = std::max(rec.max_norm, n);
        rec.samples.push_back({rec.steps[i].t, n, e, {}, c});
    }
}

// ---------------------------------------------------------------------------
// Cell (de)serialization for sweep resume

namespace {

json energy_json(const EnergyTerms& e)
{
    return {e.kinetic, e.dissipation_q, e.dissipation_lap, e.dissipation_p, e.power_in, e.stress_power, e.forcing_norm};
}
EnergyTerms energy_from(const json& j)
{
    return {j[0], j[1], j[2], j[3], j[4], j[5], j[6]};
}
json audit_json(const AuditTerms& a) { return {a.velocity_power, a.gradient_q, a.gradient_5q6, a.stress_dual}; }
AuditTerms audit_from(const json& j) { return {j[0], j[1], j[2], j[3]}; }
json cumulative_json(const CumulativeTerms& c)
{
    return {c.dissipation_q, c.dissipation_lap, c.dissipation_p, c.power_in, c.stress_power, c.forcing_dual};
}
CumulativeTerms cumulative_from(const json& j) { return {j[0], j[1], j[2], j[3], j[4], j[5]}; }

} // namespace

json cell_to_json(const OrbitCell& c)
{
    json j = orbit_summary_json(c);
    const auto& tr = c.trajectory;
    json samples = json::array();
    for (const auto& s : tr.samples)
        samples.push_back({s.t, s.norm, energy_json(s.energy), audit_json(s.audit), cumulative_json(s.cumulative)});
    json states = json::array();
    for (const auto& s : tr.states) states.push_back(to_json(s));
    j["trajectory"] = {{"q", tr.q},
                       {"kappa", tr.kappa},
                       {"max_norm", tr.max_norm},
                       {"accepted", tr.accepted},
                       {"rejected", tr.rejected},
                       {"rhs_evaluations", tr.rhs_evaluations},
                       {"samples", samples},
                       {"states", states}};
    return j;
}

OrbitCell cell_from_json(const json& j)
{
    OrbitCell c;
    c.n_max = j.at("n_max");
    c.epsilon = j.at("epsilon");
    c.kappa = j.at("kappa");
    c.converged = j.at("converged");
    c.residual = j.at("residual");
    c.ball_radius = j.at("ball_radius").is_number() ? j.at("ball_radius").get<double>() : INFINITY;
    c.method = j.at("method");
    c.error = j.at("error");
    const auto& t = j.at("trajectory");
    auto& tr = c.trajectory;
    tr.q = t.at("q");
    tr.kappa = t.at("kappa");
    tr.max_norm = t.at("max_norm");
    tr.accepted = t.at("accepted");
    tr.rejected = t.at("rejected");
    tr.rhs_evaluations = t.at("rhs_evaluations");
    for (const auto& s : t.at("samples"))
        tr.samples.push_back({s[0], s[1], energy_from(s[2]), audit_from(s[3]), cumulative_from(s[4])});
    for (const auto& s : t.at("states")) tr.states.push_back(spectral_field_from_json(s));
    return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

/// Files written by one command, with digests for the manifest.
class RunDir {
public:
    explicit RunDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }
    const fs::path& root() const { return root_; }

    void write(const std::string& name, const std::string& content)
    {
        const fs::path p = root_ / name;
        fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << content;
        if (!out) throw fs::filesystem_error("cannot write", p, std::make_error_code(std::errc::io_error));
        files_[name] = {sha256_hex(content), content.size()};
    }
    void add_existing(const std::string& name)
    {
        const std::string content = read_text(root_ / name);
        files_[name] = {sha256_hex(content), content.size()};
    }

    void write_manifest(const std::string& command, const ExperimentConfig& cfg, const std::string& config_text,
                        const json& constants, double wall_clock, const json& stages)
    {
        json files = json::array();
        for (const auto& [name, info] : files_)
            files.push_back({{"path", name}, {"sha256", info.first}, {"bytes", info.second}});
        json m = {{"schema_version", kSchemaVersion},
                  {"command", command},
                  {"code_version", kCodeVersion},
                  {"config_sha256", sha256_hex(config_text)},
                  {"seed", cfg.seed},
                  {"constants", constants},
                  {"wall_clock_seconds", wall_clock},
                  {"stages", stages},
                  {"files", files}};
        std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
        out << m.dump(2) << '\n';
    }

private:
    fs::path root_;
    std::map<std::string, std::pair<std::string, std::size_t>> files_;
};

struct Prepared {
    ExperimentConfig cfg;
    std::string config_text;
    fs::path out;
};

std::optional<Prepared> prepare(const RunOptions& opts, std::ostream& log)
{
    Prepared p;
    try {
        p.config_text = read_text(opts.config);
        p.cfg = parse_config(p.config_text);
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return std::nullopt;
    }
    if (opts.seed) p.cfg.seed = *opts.seed;
    p.cfg.solver.seed = p.cfg.seed;
    if (opts.override_degenerate) {
        p.cfg.integrator.allow_degenerate = true;
        if (p.cfg.stress.degenerate() || (p.cfg.sweep && p.cfg.stress.q < 2.0))
            log << "warning: degenerate rheology override active (kappa = 0 with q < 2); "
                   "the stress is not Lipschitz at Dv = 0\n";
    }
    p.out = opts.out ? *opts.out : fs::path(p.cfg.output.value_or("run"));
    return p;
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string trajectory_csv(const TrajectoryRecord& r)
{
    std::ostringstream s;
    write_trajectory_csv(r, s);
    return s.str();
}

std::string audit_csv(const TrajectoryRecord& r)
{
    std::ostringstream s;
    write_audit_csv(r, s);
    return s.str();
}

/// Digest of everything that determines a cell's physics.
std::string physics_digest(const ExperimentConfig& cfg)
{
    json j = cfg.source;
    j.erase("sweep");
    j.erase("output");
    j["seed"] = cfg.seed;
    j["allow_degenerate"] = cfg.integrator.allow_degenerate;
    return sha256_hex(j.dump());
}

std::string cell_file(const CellKey& k)
{
    return "cells/cell_n" + std::to_string(k.n_max) + "_eps" + format_double(k.epsilon) + "_kappa" +
           format_double(k.kappa) + ".json";
}

} // namespace

int cmd_solve_periodic(const RunOptions& opts, std::ostream& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto prep = prepare(opts, log);
    if (!prep) return kExitInvalid;
    const auto& cfg = prep->cfg;
    try {
        PeriodicProblem problem = cfg.problem();
        problem.integrator.audit = true;
        problem.integrator.energy_monitor = true;
        if (problem.stress.degenerate() && !problem.integrator.allow_degenerate)
            throw InvalidInput("q < 2 with kappa = 0 needs --override-degenerate");
        const auto consts = estimate_embedding_constants(cfg.domain, cfg.stress.q, cfg.embedding_budget, cfg.seed);
        const double K = ball_radius(problem.forcing.max_l2(), cfg.stress, consts, RadiusVariant::K);
        SolverConfig solver = cfg.solver;
        solver.radius = K;
        const OrbitResult orbit = find_periodic_orbit(problem, solver);

        const auto energy = verify_energy_inequality(orbit.trajectory, consts);
        const auto ball = ball_invariance_check(orbit.trajectory, K);
        json doc = {{"schema_version", kSchemaVersion},
                    {"q", cfg.stress.q},
                    {"kappa", cfg.stress.kappa},
                    {"epsilon", cfg.reg.epsilon},
                    {"period", cfg.period},
                    {"n_max", cfg.domain.mode_cutoff},
                    {"converged", orbit.converged},
                    {"residual", orbit.residual},
                    {"tolerance", orbit.tolerance},
                    {"iterations", orbit.iterations},
                    {"map_evaluations", orbit.map_evaluations},
                    {"method", to_string(orbit.method)},
                    {"ball_radius_K", K},
                    {"constants", to_json(consts)},
                    {"residual_history", orbit.residual_history},
                    {"sup_norm", ball.max_norm},
                    {"energy_inequality", to_json(energy)},
                    {"initial_state", to_json(orbit.initial_state)}};

        RunDir run(prep->out);
        run.write("config.json", prep->config_text);
        run.write("orbit.json", json_text(doc));
        run.write("trajectory.csv", trajectory_csv(orbit.trajectory));
        run.write("audit.csv", audit_csv(orbit.trajectory));
        json stages = json::array({{{"name", "embedding_constants"}, {"status", "ok"}},
                                   {{"name", "periodic_orbit"}, {"status", orbit.converged ? "converged" : "not_converged"}},
                                   {{"name", "energy_inequality"}, {"status", energy.holds ? "holds" : "violated"}}});
        run.write_manifest("solve-periodic", cfg, prep->config_text, to_json(consts), seconds_since(t0), stages);

        if (!orbit.converged) {
            log << "not converged: best residual " << format_double(orbit.residual) << " > tolerance "
                << format_double(orbit.tolerance) << '\n';
            return kExitNotConverged;
        }
        log << "converged (" << to_string(orbit.method) << "): residual " << format_double(orbit.residual)
            << ", K = " << format_double(K) << '\n';
        return kExitOk;
    } catch (const InvalidInput& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::filesystem::filesystem_error& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const IntegrationFailure& e) {
        log << "not converged: " << e.what() << '\n';
        return kExitNotConverged;
    }
}

int cmd_extinction(const RunOptions& opts, std::ostream& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto prep = prepare(opts, log);
    if (!prep) return kExitInvalid;
    const auto& cfg = prep->cfg;
    try {
        const PeriodicProblem problem = cfg.problem();
        const auto consts = estimate_embedding_constants(cfg.domain, cfg.stress.q, cfg.embedding_budget, cfg.seed);
        const auto rep = extinction_experiment(problem, consts, cfg.extinction_threshold, cfg.solver);
        json doc = {{"schema_version", kSchemaVersion},
                    {"q", cfg.stress.q},
                    {"kappa", cfg.stress.kappa},
                    {"epsilon", cfg.reg.epsilon},
                    {"period", cfg.period},
                    {"constants", to_json(consts)},
                    {"report", to_json(rep)}};
        RunDir run(prep->out);
        run.write("config.json", prep->config_text);
        run.write("extinction.json", json_text(doc));
        json stages = json::array({{{"name", "extinction"}, {"status", rep.within_bound ? "within_bound" : "violated"}}});
        run.write_manifest("extinction", cfg, prep->config_text, to_json(consts), seconds_since(t0), stages);
        if (!rep.orbit_converged) {
            log << "not converged: orbit residual " << format_double(rep.orbit_residual) << '\n';
            return kExitNotConverged;
        }
        log << "t_bar = " << format_double(rep.shutoff) << ", t_meas = " << format_double(rep.measured)
            << ", bound = " << format_double(rep.bound) << '\n';
        return rep.within_bound ? kExitOk : kExitCheckFailed;
    } catch (const CompatibilityError& e) {
        log << "error: " << e.what() << "\nminimal T: " << format_double(e.minimal_period()) << '\n';
        return kExitInvalid;
    } catch (const InvalidInput& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::filesystem::filesystem_error& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const IntegrationFailure& e) {
        log << "not converged: " << e.what() << '\n';
        return kExitNotConverged;
    }
}

namespace {

SpectralField test_field(const TorusDomain& dom)
{
    SpectralField phi(dom);
    if (auto m = phi.modes().find({1, 1, 0}, 0)) phi[*m] = 1.0;
    return phi;
}

/// Epsilon and kappa audits along every line of the grid with >= 3 levels.
json cascade_checks(const CascadeReport& rep, const ExperimentConfig& cfg, bool& all_pass)
{
    json eps = json::array(), kap = json::array();
    const auto& ax = rep.axes;
    const std::size_t ne = ax.epsilon.size(), nk = ax.kappa.size();
    for (std::size_t a = 0; a < ax.n_max.size(); ++a) {
        TorusDomain dom = cfg.domain;
        dom.mode_cutoff = ax.n_max[a];
        if (ne >= 3)
            for (std::size_t c = 0; c < nk; ++c) {
                std::vector<OrbitCell> line;
                for (std::size_t b = 0; b < ne; ++b) line.push_back(rep.cells[(a * ne + b) * nk + c]);
                const auto r = epsilon_scaling_check(line, cfg.stress.q, test_field(dom));
                all_pass = all_pass && r.bounded && r.pairings_decrease && r.holder_holds;
                eps.push_back({{"n_max", ax.n_max[a]}, {"kappa", ax.kappa[c]}, {"report", to_json(r)}});
            }
        if (nk >= 3)
            for (std::size_t b = 0; b < ne; ++b) {
                std::vector<OrbitCell> line;
                for (std::size_t c = 0; c < nk; ++c) line.push_back(rep.cells[(a * ne + b) * nk + c]);
                const auto r = kappa_convergence_check(line, cfg.stress, {ax.epsilon[b]}, cfg.grid_factor);
                all_pass = all_pass && r.distances_decrease && r.stress_bounded;
                kap.push_back({{"n_max", ax.n_max[a]}, {"epsilon", ax.epsilon[b]}, {"report", to_json(r)}});
            }
    }
    return {{"epsilon_scaling", eps}, {"kappa_convergence", kap}};
}

} // namespace

int cmd_sweep(const RunOptions& opts, std::ostream& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto prep = prepare(opts, log);
    if (!prep) return kExitInvalid;
    const auto& cfg = prep->cfg;
    if (!cfg.sweep) {
        log << "error: config has no 'sweep' section\n";
        return kExitInvalid;
    }
    try {
        RunDir run(prep->out);
        run.write("config.json", prep->config_text);
        const std::string digest = physics_digest(cfg);

        SweepOptions so;
        so.solver = cfg.solver;
        so.embedding_budget = cfg.embedding_budget;
        so.seed = cfg.seed;
        so.workers = std::max(1, opts.workers);
        std::size_t reused = 0, computed = 0;
        so.load = [&](const CellKey& k) -> std::optional<OrbitCell> {
            const fs::path p = run.root() / cell_file(k);
            if (!fs::exists(p)) return std::nullopt;
            try {
                const json j = json::parse(read_text(p));
                if (j.value("physics_sha256", "") != digest) return std::nullopt;
                ++reused;
                return cell_from_json(j.at("cell"));
            } catch (const std::exception&) {
                return std::nullopt;  // unreadable or partial file: recompute
            }
        };
        auto write_cell = [&](const OrbitCell& c) {
            const json j = {{"physics_sha256", digest}, {"cell", cell_to_json(c)}};
            const fs::path p = run.root() / cell_file({c.n_max, c.epsilon, c.kappa});
            fs::create_directories(p.parent_path());
            const fs::path tmp = p.string() + ".tmp";
            {
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                out << j.dump() << '\n';
                if (!out) throw fs::filesystem_error("cannot write", tmp, std::make_error_code(std::errc::io_error));
            }
            fs::rename(tmp, p);  // a cell file is either complete or absent
        };
        std::string store_error;
        so.store = [&](const OrbitCell& c) noexcept {
            ++computed;
            try {
                write_cell(c);
            } catch (const std::exception& e) {
                store_error = e.what();  // workers must not throw; reported after the sweep
            }
        };
        PeriodicProblem tmpl = cfg.problem();
        const auto rep = cascade_sweep(*cfg.sweep, tmpl, so);
        if (!store_error.empty()) throw fs::filesystem_error(store_error, std::make_error_code(std::errc::io_error));

        bool checks_pass = true;
        json doc = to_json(rep);
        doc["schema_version"] = kSchemaVersion;
        doc["q"] = cfg.stress.q;
        doc["checks"] = cascade_checks(rep, cfg, checks_pass);
        run.write("sweep.json", json_text(doc));
        bool all_converged = true;
        for (const auto& c : rep.cells) {
            run.add_existing(cell_file({c.n_max, c.epsilon, c.kappa}));
            all_converged = all_converged && c.converged && c.error.empty();
        }
        json stages = json::array({{{"name", "cells"}, {"status", all_converged ? "converged" : "incomplete"},
                                    {"reused", reused}, {"computed", computed}},
                                   {{"name", "cascade_checks"}, {"status", checks_pass ? "pass" : "fail"}}});
        run.write_manifest("sweep", cfg, prep->config_text, json::object(), seconds_since(t0), stages);
        log << rep.cells.size() << " cells (" << reused << " reused, " << computed << " computed)\n";
        if (!all_converged) {
            log << "some cells did not converge\n";
            return kExitNotConverged;
        }
        if (!checks_pass) {
            log << "cascade checks failed (see sweep.json)\n";
            return kExitCheckFailed;
        }
        return kExitOk;
    } catch (const InvalidInput& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::filesystem::filesystem_error& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
}

// ---------------------------------------------------------------------------

namespace {

EmbeddingConstants constants_from(const json& j)
{
    EmbeddingConstants c;
    c.q = j.at("q");
    c.embedding = j.at("embedding");
    c.C_S = j.at("C_S");
    c.C_P = j.at("C_P");
    c.C_K = j.at("C_K");
    c.C3 = j.at("C3");
    c.C1 = j.at("C1");
    c.C2 = j.at("C2");
    c.alpha = j.at("alpha");
    c.sample_budget = j.at("sample_budget");
    return c;
}

json verdict(const char* status, json detail = json::object())
{
    detail["status"] = status;
    return detail;
}

} // namespace

int cmd_verify(const fs::path& dir, std::ostream& log)
{
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
        for (const auto& f : manifest.at("files")) {
            const fs::path p = dir / f.at("path").get<std::string>();
            if (!fs::exists(p)) {
                log << "error: missing artifact " << p.string() << '\n';
                return kExitInvalid;
            }
            if (sha256_file(p) != f.at("sha256").get<std::string>()) {
                log << "error: digest mismatch for " << p.string() << '\n';
                return kExitInvalid;
            }
        }
    } catch (const std::exception& e) {
        log << "error: unreadable run directory: " << e.what() << '\n';
        return kExitInvalid;
    }

    json checks = json::object();
    bool pass = true;
    try {
        const ExperimentConfig cfg = load_config(dir / "config.json");
        const std::string command = manifest.at("command");
        const ForcingSignal forcing = cfg.forcing();

        if (command == "solve-periodic") {
            const json orbit = json::parse(read_text(dir / "orbit.json"));
            const auto consts = constants_from(orbit.at("constants"));
            std::ifstream tin(dir / "trajectory.csv", std::ios::binary);
            TrajectoryRecord rec = read_trajectory_csv(tin);
            rebuild_from_steps(rec, forcing, cfg.stress);
            const auto energy = verify_energy_inequality(rec, consts);
            checks["energy_inequality"] = verdict(energy.holds ? "pass" : "fail", to_json(energy));
            pass = pass && energy.holds;

            std::ifstream ain(dir / "audit.csv", std::ios::binary);
            TrajectoryRecord audit;
            audit.samples = read_audit_csv(ain);
            audit.max_norm = rec.max_norm;
            const auto interp = interpolation_bound_check(audit, cfg.stress.q);
            checks["interpolation"] = verdict(interp.holds ? "pass" : "fail", to_json(interp));
            pass = pass && interp.holds;

            const double K = orbit.at("ball_radius_K");
            const auto ball = ball_invariance_check(rec, K);
            checks["ball_invariance"] = verdict(ball.holds ? "pass" : "fail",
                                                {{"radius", K}, {"max_norm", ball.max_norm}});
            pass = pass && ball.holds;
            checks["epsilon_scaling"] = verdict("skipped", {{"reason", "single epsilon level"}});
        } else if (command == "sweep") {
            std::vector<OrbitCell> cells;
            for (const auto& f : manifest.at("files")) {
                const std::string path = f.at("path");
                if (path.rfind("cells/", 0) != 0) continue;
                cells.push_back(cell_from_json(json::parse(read_text(dir / path)).at("cell")));
            }
            json per_cell = json::array();
            bool energy_ok = true, interp_ok = true, ball_ok = true;
            for (const auto& c : cells) {
                if (!c.converged || !c.error.empty()) continue;
                TorusDomain dom = cfg.domain;
                dom.mode_cutoff = c.n_max;
                const auto consts = estimate_embedding_constants(dom, cfg.stress.q, cfg.embedding_budget, cfg.seed);
                const auto e = verify_energy_inequality(c.trajectory, consts);
                const auto in = interpolation_bound_check(c.trajectory, cfg.stress.q);
                const auto b = ball_invariance_check(c.trajectory, c.ball_radius);
                energy_ok = energy_ok && e.holds;
                interp_ok = interp_ok && in.holds;
                ball_ok = ball_ok && b.holds;
                per_cell.push_back({{"n_max", c.n_max},
                                    {"epsilon", c.epsilon},
                                    {"kappa", c.kappa},
                                    {"energy", e.holds},
                                    {"interpolation", in.holds},
                                    {"ball", b.holds}});
            }
            checks["energy_inequality"] = verdict(energy_ok ? "pass" : "fail", {{"cells", per_cell}});
            checks["interpolation"] = verdict(interp_ok ? "pass" : "fail");
            checks["ball_invariance"] = verdict(ball_ok ? "pass" : "fail");
            pass = pass && energy_ok && interp_ok && ball_ok;

            // Rebuild the grid in canonical order for the line audits.
            CascadeReport rep;
            rep.axes = *cfg.sweep;
            auto uniq = [](auto& v) {
                std::sort(v.begin(), v.end());
                v.erase(std::unique(v.begin(), v.end()), v.end());
            };
            uniq(rep.axes.n_max);
            uniq(rep.axes.epsilon);
            uniq(rep.axes.kappa);
            for (int n : rep.axes.n_max)
                for (double e : rep.axes.epsilon)
                    for (double k : rep.axes.kappa) {
                        auto it = std::find_if(cells.begin(), cells.end(), [&](const OrbitCell& c) {
                            return c.n_max == n && c.epsilon == e && c.kappa == k;
                        });
                        if (it == cells.end()) throw InvalidInput("sweep cell missing from manifest");
                        rep.cells.push_back(*it);
                    }
            bool cascade_ok = true;
            checks["cascade"] = cascade_checks(rep, cfg, cascade_ok);
            checks["epsilon_scaling"] = verdict(cascade_ok ? "pass" : "fail");
            pass = pass && cascade_ok;
        } else if (command == "extinction") {
            const json ext = json::parse(read_text(dir / "extinction.json"));
            const bool ok = ext.at("report").at("within_bound").get<bool>();
            checks["extinction_bound"] = verdict(ok ? "pass" : "fail", ext.at("report"));
            pass = pass && ok;
        } else {
            throw InvalidInput("unknown command in manifest: " + command);
        }
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitInvalid;
    }

    std::ofstream out(dir / "verify.json", std::ios::binary | std::ios::trunc);
    out << json({{"pass", pass}, {"checks", checks}}).dump(2) << '\n';
    for (const auto& [name, v] : checks.items())
        if (v.contains("status")) log << name << ": " << v.at("status").get<std::string>() << '\n';
    return pass ? kExitOk : kExitCheckFailed;
}

} // namespace gnflow::cli
