// covnet: simulate -> fit / cv -> eigen / eval -> export, driven by key = value
// config files with --set overrides. Every run writes <command>.resolved.cfg
// next to its outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <covnet/covnet.hpp>

namespace fs = std::filesystem;
using namespace covnet;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

/// Known keys with default values; an empty value means unset.
class Config {
public:
    Config(std::string command, std::map<std::string, std::string> defaults)
        : command_(std::move(command)), values_(std::move(defaults)) {}

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw io_error(path, "cannot open config");
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(trim(line), path + ":" + std::to_string(lineno) + ": expected key = value");
            assign(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw config_error(kv, "--set expects key=value");
        assign(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    void assign(const std::string& key, const std::string& value) {
        if (!values_.contains(key)) throw config_error(key, "unknown key for '" + command_ + "'");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return !values_.at(key).empty(); }

    std::string str(const std::string& key) const {
        if (!has(key)) throw config_error(key, "required");
        return values_.at(key);
    }

    long integer(const std::string& key, long min) const {
        const std::string s = str(key);
        std::size_t used = 0;
        long v = 0;
        try {
            v = std::stol(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || used == 0) throw config_error(key, "expected an integer, got '" + s + "'");
        if (v < min) throw config_error(key, "must be >= " + std::to_string(min) + ", got " + s);
        return v;
    }

    std::uint64_t unsigned64(const std::string& key) const {
        const std::string s = str(key);
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            if (!s.empty() && s[0] != '-') v = std::stoull(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || used == 0) throw config_error(key, "expected an unsigned integer, got '" + s + "'");
        return v;
    }

    double real(const std::string& key) const {
        const std::string s = str(key);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || used == 0 || !std::isfinite(v))
            throw config_error(key, "expected a finite real number, got '" + s + "'");
        return v;
    }

    void write_resolved(const fs::path& dir) const {
        const fs::path path = dir / (command_ + ".resolved.cfg");
        std::ofstream os(path);
        if (!os) throw io_error(path.string(), "cannot open for writing");
        os << "# resolved configuration for 'covnet " << command_ << "'\n";
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    }

private:
    std::string command_;
    std::map<std::string, std::string> values_;
};

struct CommonFlags {
    std::string config;
    std::string out = ".";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

Config resolve(const std::string& command, std::map<std::string, std::string> defaults, const CommonFlags& flags) {
    Config cfg(command, std::move(defaults));
    if (!flags.config.empty()) cfg.load_file(flags.config);
    for (const auto& kv : flags.sets) cfg.set(kv);
    if (flags.seed) cfg.assign("seed", std::to_string(*flags.seed));
    return cfg;
}

fs::path output_dir(const CommonFlags& flags) {
    const fs::path dir(flags.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw io_error(dir.string(), "cannot create output directory");
    return dir;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error(path.string(), "cannot open for writing");
    return os;
}

std::string num(double x) { return detail::fmt17(x); }

void write_point_columns(std::ostream& os, int d) {
    for (int a = 1; a <= d; ++a) os << ",u" << a;
}

std::vector<int> grid_sizes(const Config& cfg, const std::string& key, int d) {
    const auto parts = split(cfg.str(key), ',');
    if (parts.size() != 1 && parts.size() != static_cast<std::size_t>(d))
        throw config_error(key, "give one size or one per axis (d = " + std::to_string(d) + ")");
    std::vector<int> sizes;
    for (const auto& p : parts) {
        std::size_t used = 0;
        int k = 0;
        try {
            k = std::stoi(p, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != p.size() || used == 0 || k < 1) throw config_error(key, "grid sizes must be integers >= 1, got '" + p + "'");
        sizes.push_back(k);
    }
    if (sizes.size() == 1) sizes.assign(static_cast<std::size_t>(d), sizes[0]);
    return sizes;
}

KernelSpec kernel_from(const Config& cfg) {
    KernelKind kind;
    try {
        kind = parse_kernel_kind(cfg.str("kernel"));
    } catch (const invalid_argument& e) {
        throw config_error("kernel", e.what());
    }
    const int d = static_cast<int>(cfg.integer("d", 1));
    const double nu = cfg.real("nu");
    if (kind == KernelKind::matern && !(nu > 0.0)) throw config_error("nu", "Matern smoothness must be > 0");
    try {
        return make_kernel_spec(kind, d, nu);
    } catch (const invalid_argument& e) {
        throw config_error("d", e.what());
    }
}

const std::map<std::string, std::string>& train_defaults() {
    static const std::map<std::string, std::string> d = [] {
        const TrainConfig t;
        return std::map<std::string, std::string>{
            {"lr", num(t.lr)},           {"epochs", std::to_string(t.epochs)}, {"beta1", num(t.beta1)},
            {"beta2", num(t.beta2)},     {"eps", num(t.eps)},                  {"rel_tol", num(t.rel_tol)},
            {"window", std::to_string(t.window)}, {"center_mode", center_mode_name(t.center_mode)},
            {"batch", std::to_string(t.batch)},
        };
    }();
    return d;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig t;
    t.lr = cfg.real("lr");
    t.epochs = static_cast<std::size_t>(cfg.integer("epochs", 1));
    t.beta1 = cfg.real("beta1");
    t.beta2 = cfg.real("beta2");
    t.eps = cfg.real("eps");
    t.rel_tol = cfg.real("rel_tol");
    t.window = static_cast<std::size_t>(cfg.integer("window", 0));
    t.batch = static_cast<std::size_t>(cfg.integer("batch", 0));
    t.seed = cfg.unsigned64("seed");
    try {
        t.center_mode = parse_center_mode(cfg.str("center_mode"));
    } catch (const invalid_argument& e) {
        throw config_error("center_mode", e.what());
    }
    const std::pair<const char*, bool> checks[] = {
        {"lr", t.lr > 0.0},
        {"beta1", t.beta1 >= 0.0 && t.beta1 < 1.0},
        {"beta2", t.beta2 >= 0.0 && t.beta2 < 1.0},
        {"eps", t.eps > 0.0},
        {"rel_tol", t.rel_tol >= 0.0},
    };
    for (const auto& [key, ok] : checks)
        if (!ok) throw config_error(key, "out of range");
    return t;
}

Architecture architecture_from(const std::string& kind_key, const std::string& arch_name_value, long rank,
                               const std::string& layers, const std::string& width, int d) {
    ArchKind kind;
    try {
        kind = parse_arch_kind(arch_name_value);
    } catch (const invalid_argument& e) {
        throw config_error(kind_key, e.what());
    }
    if (kind == ArchKind::shallow) {
        if (!layers.empty()) throw config_error("L", "shallow architecture has no hidden layers");
        return Architecture::shallow(d, static_cast<int>(rank));
    }
    if (layers.empty()) throw config_error("L", "required for " + arch_name_value + " architectures");
    int l = 0, w = 0;
    try {
        l = std::stoi(layers);
        if (!width.empty()) w = std::stoi(width);
    } catch (const std::exception&) {
        throw config_error(layers.empty() ? "width" : "L", "expected an integer");
    }
    if (l < 1) throw config_error("L", "must be >= 1");
    if (!width.empty() && w < 1) throw config_error("width", "must be >= 1");
    return kind == ArchKind::deep ? Architecture::deep(d, static_cast<int>(rank), l, w)
                                  : Architecture::deepshared(d, static_cast<int>(rank), l, w);
}

// ---------------------------------------------------------------------------

int run_simulate(const CommonFlags& flags) {
    Config cfg = resolve("simulate",
                         {{"kernel", "brownian"}, {"d", "2"}, {"K", "10"}, {"N", "50"}, {"nu", "0.5"},
                          {"noise_sigma", "0"}, {"noise_seed", "0"}, {"seed", "0"}, {"output", "fields.cvnf"}},
                         flags);
    const KernelSpec spec = kernel_from(cfg);
    const Grid grid(grid_sizes(cfg, "K", spec.dim));
    const long n = cfg.integer("N", 1);
    const double sigma = cfg.real("noise_sigma");
    if (sigma < 0.0) throw config_error("noise_sigma", "must be >= 0");
    std::optional<NoiseSpec> noise;
    if (sigma > 0.0) noise = NoiseSpec{sigma, cfg.unsigned64("noise_seed")};

    const fs::path dir = output_dir(flags);
    const FieldMatrix f = sample_gaussian_fields(spec, grid, n, cfg.unsigned64("seed"), noise);
    const fs::path out = dir / cfg.str("output");
    write_fields(out.string(), f);

    std::ofstream meta = open_out(out.string() + ".meta");
    meta << "kernel = " << kernel_name(spec.kind) << "\n"
         << "d = " << spec.dim << "\n"
         << "sizes =";
    for (int k : grid.sizes()) meta << " " << k;
    meta << "\nN = " << n << "\n";
    if (spec.kind == KernelKind::matern) meta << "nu = " << num(spec.nu) << "\n";
    if (spec.rotation.size() > 0) {
        meta << "rotation =";
        for (Eigen::Index i = 0; i < spec.rotation.rows(); ++i)
            for (Eigen::Index j = 0; j < spec.rotation.cols(); ++j) meta << " " << num(spec.rotation(i, j));
        meta << "\n";
    }
    meta << "seed = " << cfg.str("seed") << "\n"
         << "noise_sigma = " << num(sigma) << "\n"
         << "noise_seed = " << cfg.str("noise_seed") << "\n";
    cfg.write_resolved(dir);
    std::cout << "wrote " << out.string() << " (N = " << n << ", D = " << grid.size() << ")\n";
    return 0;
}

int run_fit(const CommonFlags& flags) {
    auto defaults = train_defaults();
    defaults.insert({{"input", ""}, {"arch", "shallow"}, {"R", "5"}, {"L", ""}, {"width", ""}, {"seed", "0"},
                     {"output", "model.txt"}, {"loss_output", "loss.csv"}});
    Config cfg = resolve("fit", defaults, flags);
    const TrainConfig train = train_config_from(cfg);
    const long rank = cfg.integer("R", 1);
    const FieldMatrix f = read_fields(cfg.str("input"));
    const Architecture arch = architecture_from("arch", cfg.str("arch"), rank, cfg.has("L") ? cfg.str("L") : "",
                                                cfg.has("width") ? cfg.str("width") : "", f.grid().dim());
    if (f.count() < 2) throw config_error("input", "need at least 2 fields to fit");

    const fs::path dir = output_dir(flags);
    const FitResult res = fit(f, arch, train);
    save_model((dir / cfg.str("output")).string(), res.model);

    std::ofstream csv = open_out(dir / cfg.str("loss_output"));
    csv << "epoch,total,term_xx,term_gg,term_xg\n";
    for (const auto& rec : res.trace)
        csv << rec.epoch << "," << num(rec.loss.total()) << "," << num(rec.loss.term_xx) << "," << num(rec.loss.term_gg)
            << "," << num(rec.loss.term_xg) << "\n";
    cfg.write_resolved(dir);
    std::cout << "fitted " << arch_name(arch.kind) << " R = " << arch.rank << " in " << res.trace.size()
              << " epochs; loss " << num(res.trace.front().loss.total()) << " -> " << num(res.trace.back().loss.total())
              << "\n";
    return 0;
}

int run_eval(const CommonFlags& flags) {
    Config cfg = resolve("eval",
                         {{"model", ""}, {"fields", ""}, {"estimators", "covnet"}, {"kernel", "brownian"}, {"d", "2"},
                          {"nu", "0.5"}, {"M", "50000"}, {"seed", "0"}, {"output", "errors.csv"}},
                         flags);
    const KernelSpec truth = kernel_from(cfg);
    const auto m = static_cast<std::size_t>(cfg.integer("M", 1));
    const std::uint64_t seed = cfg.unsigned64("seed");

    std::optional<FittedCovariance> model;
    std::optional<FieldMatrix> fields;
    std::vector<std::pair<std::string, PairKernel>> estimators;
    for (const auto& name : split(cfg.str("estimators"), ',')) {
        if (name == "covnet") {
            if (!model) model = load_model(cfg.str("model"));
            if (model->arch.dim != truth.dim)
                throw config_error("d", "truth dimension " + std::to_string(truth.dim) + " does not match model dimension " +
                                            std::to_string(model->arch.dim));
            estimators.emplace_back("covnet", as_pair_kernel(*model));
        } else if (name == "empirical" || name == "separable") {
            if (!fields) fields = read_fields(cfg.str("fields")).centered();
            if (fields->grid().dim() != truth.dim)
                throw config_error("d", "truth dimension does not match field grid dimension");
            const DenseCovariance emp = empirical_covariance(*fields);
            if (name == "empirical") {
                estimators.emplace_back("empirical", as_pair_kernel(emp));
            } else {
                if (truth.dim != 2) throw config_error("estimators", "the separable baseline supports d = 2 only");
                estimators.emplace_back("separable_nearest_kronecker", as_pair_kernel(best_separable_2d(emp)));
            }
        } else if (name == "zero") {
            estimators.emplace_back("zero", zero_pair_kernel());
        } else {
            throw config_error("estimators", "unknown estimator '" + name + "' (covnet, empirical, separable, zero)");
        }
    }

    const fs::path dir = output_dir(flags);
    std::ofstream csv = open_out(dir / cfg.str("output"));
    csv << "estimator,relative_error,M,seed\n";
    for (const auto& [name, est] : estimators) {
        const double err = relative_error_mc(est, truth, m, seed);
        csv << name << "," << num(err) << "," << m << "," << seed << "\n";
        std::cout << name << ": " << num(err) << "\n";
    }
    cfg.write_resolved(dir);
    return 0;
}

int run_eigen(const CommonFlags& flags) {
    Config cfg = resolve("eigen",
                         {{"model", ""}, {"M", std::to_string(kDefaultGramSamples)}, {"seed", "0"}, {"K", "0"},
                          {"count", "0"}, {"output", "eigenvalues.csv"}},
                         flags);
    const FittedCovariance model = load_model(cfg.str("model"));
    const auto m = static_cast<std::size_t>(cfg.integer("M", 1));
    const EigenSystem es = eigendecompose(model, constituent_gram(model, m, cfg.unsigned64("seed")));

    const fs::path dir = output_dir(flags);
    std::ofstream csv = open_out(dir / cfg.str("output"));
    csv << "index,eigenvalue\n";
    for (int i = 0; i < es.rank; ++i) csv << i << "," << num(es.eta(i)) << "\n";

    const auto sizes = split(cfg.str("K"), ',');
    if (!(sizes.size() == 1 && sizes[0] == "0")) {
        const Grid grid(grid_sizes(cfg, "K", model.arch.dim));
        const long count = cfg.integer("count", 0);
        const int shown = count == 0 ? es.rank : static_cast<int>(std::min<long>(count, es.rank));
        const Matrix pts = grid.coordinates();
        for (int i = 0; i < shown; ++i) {
            const Vector psi = eval_eigenfunction(model, es, i, pts);
            std::ofstream heat = open_out(dir / ("eigenfunction_" + std::to_string(i) + ".csv"));
            heat << "flat_index";
            write_point_columns(heat, model.arch.dim);
            heat << ",value\n";
            for (Eigen::Index k = 0; k < pts.rows(); ++k) {
                heat << k;
                for (Eigen::Index a = 0; a < pts.cols(); ++a) heat << "," << num(pts(k, a));
                heat << "," << num(psi(k)) << "\n";
            }
        }
    }
    cfg.write_resolved(dir);
    std::cout << "rank " << es.rank << "; leading eigenvalue " << (es.rank > 0 ? num(es.eta(0)) : "0") << "\n";
    return 0;
}

struct ParsedCandidate {
    std::string label;
    CvCandidate candidate;
};

std::vector<ParsedCandidate> parse_candidates(const Config& cfg, int d, const TrainConfig& train) {
    std::vector<ParsedCandidate> out;
    for (const auto& item : split(cfg.str("candidates"), ',')) {
        const auto parts = split(item, ':');
        if (parts.size() < 2 || parts.size() > 3)
            throw config_error("candidates", "expected arch:R or arch:R:L, got '" + item + "'");
        long rank = 0;
        try {
            rank = std::stol(parts[1]);
        } catch (const std::exception&) {
            throw config_error("candidates", "bad rank in '" + item + "'");
        }
        if (rank < 1) throw config_error("candidates", "rank must be >= 1 in '" + item + "'");
        const std::string layers = parts.size() == 3 ? parts[2] : "";
        const Architecture arch = architecture_from("candidates", parts[0], rank, layers, "", d);
        std::string label = arch_name(arch.kind) + "-R" + std::to_string(arch.rank);
        if (arch.kind != ArchKind::shallow) label += "-L" + std::to_string(arch.depth());
        out.push_back({label, {arch, train}});
    }
    if (out.empty()) throw config_error("candidates", "no candidates given");
    return out;
}

std::string default_candidates() {
    std::string out;
    for (int r : {5, 10, 20, 40, 80}) out += "shallow:" + std::to_string(r) + ",";
    for (const char* kind : {"deep", "deepshared"})
        for (int l : {2, 3, 4})
            for (int r : {5, 10, 20, 40}) out += std::string(kind) + ":" + std::to_string(r) + ":" + std::to_string(l) + ",";
    out.pop_back();
    return out;
}

int run_cv(const CommonFlags& flags) {
    auto defaults = train_defaults();
    defaults.insert({{"input", ""}, {"candidates", default_candidates()}, {"V", "5"},
                     {"seed", "0"}, {"output", "cv_report.csv"}, {"summary_output", "cv_summary.csv"}});
    Config cfg = resolve("cv", defaults, flags);
    const TrainConfig train = train_config_from(cfg);
    const long v = cfg.integer("V", 2);
    const FieldMatrix f = read_fields(cfg.str("input"));
    if (f.count() < v) throw config_error("V", "need at least V fields");
    const auto cands = parse_candidates(cfg, f.grid().dim(), train);
    std::vector<CvCandidate> list;
    for (const auto& c : cands) list.push_back(c.candidate);

    const fs::path dir = output_dir(flags);
    const CvReport rep = cross_validate(f, list, static_cast<int>(v), cfg.unsigned64("seed"));

    std::ofstream csv = open_out(dir / cfg.str("output"));
    csv << "candidate,fold,loss\n";
    for (std::size_t c = 0; c < rep.rows.size(); ++c)
        for (std::size_t k = 0; k < rep.rows[c].fold_losses.size(); ++k)
            csv << cands[c].label << "," << k << "," << num(rep.rows[c].fold_losses[k]) << "\n";

    std::ofstream sum = open_out(dir / cfg.str("summary_output"));
    sum << "candidate,parameters,mean_loss,status,selected\n";
    for (std::size_t c = 0; c < rep.rows.size(); ++c) {
        const auto& row = rep.rows[c];
        sum << cands[c].label << "," << census(row.candidate.arch) << "," << (row.failed ? "" : num(row.mean_loss)) << ","
            << (row.failed ? "failed" : "ok") << "," << (c == rep.selected ? 1 : 0) << "\n";
    }
    cfg.write_resolved(dir);
    std::cout << "selected " << cands[rep.selected].label << " (mean CV loss " << num(rep.rows[rep.selected].mean_loss)
              << ")\n";
    return 0;
}

int run_export(const CommonFlags& flags) {
    Config cfg = resolve("export", {{"model", ""}, {"K", "25"}, {"v0", ""}, {"seed", "0"}, {"output", "kernel_slice.csv"}},
                         flags);
    const FittedCovariance model = load_model(cfg.str("model"));
    const int d = model.arch.dim;
    const Grid grid(grid_sizes(cfg, "K", d));
    Vector v0 = Vector::Constant(d, 0.5);
    if (cfg.has("v0")) {
        const auto parts = split(cfg.str("v0"), ',');
        if (parts.size() != static_cast<std::size_t>(d)) throw config_error("v0", "expected " + std::to_string(d) + " coordinates");
        for (int a = 0; a < d; ++a) {
            try {
                v0(a) = std::stod(parts[static_cast<std::size_t>(a)]);
            } catch (const std::exception&) {
                throw config_error("v0", "bad coordinate '" + parts[static_cast<std::size_t>(a)] + "'");
            }
        }
    }

    const fs::path dir = output_dir(flags);
    std::ofstream csv = open_out(dir / cfg.str("output"));
    csv << "flat_index";
    write_point_columns(csv, d);
    csv << ",value\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector u = grid.coordinate(i);
        csv << i;
        for (int a = 0; a < d; ++a) csv << "," << num(u(a));
        csv << "," << num(kernel_at(model, u, v0)) << "\n";
    }
    cfg.write_resolved(dir);
    std::cout << "wrote " << grid.size() << " kernel values\n";
    return 0;
}

void apply_thread_env() {
    const char* env = std::getenv("COVNET_THREADS");
    if (!env) return;
    const std::string s = env;
    std::size_t used = 0;
    int n = 0;
    try {
        n = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || n < 1) throw config_error("COVNET_THREADS", "expected a positive integer, got '" + s + "'");
    Eigen::setNbThreads(n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CovNet covariance estimation for random fields on [0,1]^d"};
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* help;
        int (*run)(const CommonFlags&);
    };
    const Command commands[] = {
        {"simulate", "sample Gaussian random fields on a grid", run_simulate},
        {"fit", "fit a CovNet model to a field file", run_fit},
        {"eval", "Monte-Carlo relative Hilbert-Schmidt error against a known kernel", run_eval},
        {"eigen", "eigendecomposition of a fitted model", run_eigen},
        {"cv", "V-fold cross-validation over candidate architectures", run_cv},
        {"export", "kernel slice c(u, v0) on a grid", run_export},
    };

    std::vector<CommonFlags> flags(std::size(commands));
    std::vector<CLI::App*> subs;
    std::vector<std::uint64_t> seeds(std::size(commands));
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
        sub->add_option("--config", flags[i].config, "key = value config file");
        sub->add_option("--out", flags[i].out, "output directory");
        sub->add_option("--set", flags[i].sets, "override a config key (key=value), repeatable");
        sub->add_option("--seed", seeds[i], "random seed, overrides the config");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        apply_thread_env();
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            if (subs[i]->count("--seed") > 0) flags[i].seed = seeds[i];
            return commands[i].run(flags[i]);
        }
    } catch (const config_error& e) {
        std::cerr << "covnet: " << e.what() << "\n";
        return kExitConfig;
    } catch (const io_error& e) {
        std::cerr << "covnet: " << e.what() << "\n";
        return kExitIo;
    } catch (const format_error& e) {
        std::cerr << "covnet: format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const numeric_error& e) {
        std::cerr << "covnet: numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const resource_limit& e) {
        std::cerr << "covnet: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "covnet: invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "covnet: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
