#include "crc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "crc/error.hpp"

namespace crc {

namespace {

// Seed streams derived from a run's master seed.
enum Stream : std::uint64_t {
    kPoolStream = 1,
    kNetStream = 2,
    kTransferNetStream = 3,
    kAcquisitionStream = 4,
    kNoiseStream = 5,
    kAcquisitionNetStream = 6,
    kTestDataStream = 7,
};

template <typename Enum>
Enum lookup(const std::map<std::string, Enum>& table, const std::string& name, const char* what) {
    const auto it = table.find(name);
    if (it == table.end()) throw Error(ErrorKind::config, std::string("unknown ") + what + " '" + name + "'");
    return it->second;
}

template <typename Enum>
std::string reverse_lookup(const std::map<std::string, Enum>& table, Enum value) {
    for (const auto& [k, v] : table) {
        if (v == value) return k;
    }
    return "unknown";
}

const std::map<std::string, StrategyKind> kStrategies = {
    {"random", StrategyKind::random}, {"entropy", StrategyKind::entropy},
    {"confidence", StrategyKind::confidence}, {"egl", StrategyKind::egl},
    {"crc", StrategyKind::crc}, {"crc_balanced", StrategyKind::crc_balanced}};
const std::map<std::string, GradientScope> kScopes = {{"full", GradientScope::full},
                                                      {"last_layer", GradientScope::last_layer}};
const std::map<std::string, Reduction> kReductions = {{"blocked", Reduction::blocked},
                                                      {"traced", Reduction::traced}};
const std::map<std::string, SslMode> kSslModes = {
    {"none", SslMode::none}, {"pi_model", SslMode::pi_model}, {"mean_teacher", SslMode::mean_teacher}};

}  // namespace

std::string to_string(StrategyKind kind) { return reverse_lookup(kStrategies, kind); }
StrategyKind strategy_from_string(const std::string& name) { return lookup(kStrategies, name, "strategy"); }
std::string to_string(GradientScope scope) { return reverse_lookup(kScopes, scope); }
GradientScope scope_from_string(const std::string& name) { return lookup(kScopes, name, "scope"); }
std::string to_string(Reduction reduction) { return reverse_lookup(kReductions, reduction); }
Reduction reduction_from_string(const std::string& name) { return lookup(kReductions, name, "reduction"); }
std::string to_string(SslMode mode) { return reverse_lookup(kSslModes, mode); }
SslMode ssl_mode_from_string(const std::string& name) { return lookup(kSslModes, name, "ssl mode"); }

AcquisitionResult acquire(const StrategyConfig& strategy, const Pool& pool, const ParamVector& params,
                          const NetworkSpec& spec, std::uint64_t seed) {
    switch (strategy.kind) {
        case StrategyKind::random: return random_acquire(pool, strategy.query_size, seed);
        case StrategyKind::entropy: return entropy_acquire(pool, params, spec, strategy.query_size);
        case StrategyKind::confidence: return confidence_acquire(pool, params, spec, strategy.query_size);
        case StrategyKind::egl: return egl_acquire(pool, params, spec, strategy.query_size, strategy.scope);
        case StrategyKind::crc:
            return crc_acquire(pool, params, spec,
                               {strategy.query_size, strategy.group_size, seed, strategy.scope, strategy.reduction,
                                strategy.positivity_threshold});
        case StrategyKind::crc_balanced:
            return crc_acquire_balanced(
                pool, params, spec,
                {strategy.per_class, seed, strategy.scope, strategy.reduction, strategy.positivity_threshold});
    }
    throw Error(ErrorKind::config, "unknown strategy");
}

DatasetSplit make_datasets(const DatasetConfig& cfg) {
    DatasetSplit split;
    const std::uint64_t test_seed = derive_seed(cfg.seed, kTestDataStream);
    if (cfg.generator == "moons") {
        split.train = generate_moons(cfg.n, cfg.noise, cfg.arms, cfg.seed, cfg.binarize);
        split.test = generate_moons(cfg.n, cfg.noise, cfg.arms, test_seed, cfg.binarize);
    } else if (cfg.generator == "blobs") {
        split.train = generate_blobs(cfg.n, cfg.classes, cfg.centers, cfg.sigma, cfg.seed);
        split.test = generate_blobs(cfg.n, cfg.classes, cfg.centers, cfg.sigma, test_seed);
    } else if (cfg.generator == "csv") {
        if (cfg.path.empty() || cfg.test_path.empty()) {
            throw Error(ErrorKind::config, "csv datasets need dataset.path and dataset.test_path");
        }
        std::vector<std::string> labels;
        split.train = load_csv_dataset(cfg.path, cfg.label_column, &labels);
        split.test = load_csv_dataset(cfg.test_path, cfg.label_column, &labels);
        if (split.test.features.cols() != split.train.features.cols()) {
            throw Error(ErrorKind::config, "train and test CSV files differ in feature count");
        }
        if (split.test.num_classes > split.train.num_classes) {
            throw Error(ErrorKind::config, "test CSV has labels absent from the training CSV");
        }
        split.test.num_classes = split.train.num_classes;
    } else {
        throw Error(ErrorKind::config, "unknown dataset generator '" + cfg.generator + "'");
    }
    if (cfg.standardize) {
        const Eigen::RowVectorXd mean = split.train.features.colwise().mean();
        Eigen::RowVectorXd sd =
            (split.train.features.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
        for (auto& v : sd) {
            if (!(v > 0.0)) v = 1.0;
        }
        for (Dataset* d : {&split.train, &split.test}) {
            d->features = ((d->features.rowwise() - mean).array().rowwise() / sd.array()).matrix();
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Config text format

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error(ErrorKind::config, "key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const auto u = std::stoull(v, &pos);
        if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw Error(ErrorKind::config, "key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(ErrorKind::config, "key '" + key + "': expected true or false, got '" + v + "'");
}

template <typename T>
std::string join(const std::vector<T>& values, char sep = ',') {
    std::ostringstream out;
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? std::string(1, sep) : "") << values[i];
    return out.str();
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::config, "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        auto& d = cfg.dataset;
        auto& t = cfg.train;
        auto& s = cfg.strategy;
        if (key == "schema_version") {
            cfg.schema_version = static_cast<int>(to_uint(key, v));
            if (cfg.schema_version != kSchemaVersion) {
                throw Error(ErrorKind::config, "unsupported schema_version " + v);
            }
        } else if (key == "dataset") d.generator = v;
        else if (key == "dataset.n") d.n = to_uint(key, v);
        else if (key == "dataset.noise") d.noise = to_double(key, v);
        else if (key == "dataset.arms") d.arms = to_uint(key, v);
        else if (key == "dataset.binarize") d.binarize = to_bool(key, v);
        else if (key == "dataset.classes") d.classes = to_uint(key, v);
        else if (key == "dataset.sigma") d.sigma = to_double(key, v);
        else if (key == "dataset.centers") {
            const auto rows = split(v, ';');
            std::vector<std::vector<double>> centers;
            for (const auto& r : rows) {
                std::vector<double> c;
                for (const auto& x : split(r, ',')) c.push_back(to_double(key, x));
                if (!centers.empty() && c.size() != centers.front().size()) {
                    throw Error(ErrorKind::config, "key 'dataset.centers': rows differ in dimension");
                }
                centers.push_back(std::move(c));
            }
            d.centers.resize(static_cast<Eigen::Index>(centers.size()),
                             centers.empty() ? 0 : static_cast<Eigen::Index>(centers.front().size()));
            for (std::size_t i = 0; i < centers.size(); ++i) {
                for (std::size_t j = 0; j < centers[i].size(); ++j) {
                    d.centers(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = centers[i][j];
                }
            }
        } else if (key == "dataset.path") d.path = v;
        else if (key == "dataset.test_path") d.test_path = v;
        else if (key == "dataset.label_column") d.label_column = v;
        else if (key == "dataset.standardize") d.standardize = to_bool(key, v);
        else if (key == "dataset.seed") d.seed = to_uint(key, v);
        else if (key == "net.hidden") {
            cfg.network.hidden_widths.clear();
            for (const auto& w : split(v, ',')) cfg.network.hidden_widths.push_back(to_uint(key, w));
        } else if (key == "net.init_scale") cfg.network.init_scale = to_double(key, v);
        else if (key == "net.ntk") cfg.network.ntk_parameterization = to_bool(key, v);
        else if (key == "net.bias") cfg.network.use_bias = to_bool(key, v);
        else if (key == "train.step_size") t.step_size = to_double(key, v);
        else if (key == "train.max_steps") t.max_steps = to_uint(key, v);
        else if (key == "train.patience") {
            if (v == "none") t.early_stop_patience.reset();
            else t.early_stop_patience = to_uint(key, v);
        } else if (key == "train.ssl") t.ssl_mode = ssl_mode_from_string(v);
        else if (key == "train.consistency_weight") t.consistency_weight = to_double(key, v);
        else if (key == "train.sigma") t.perturbation_sigma = to_double(key, v);
        else if (key == "train.ema_decay") t.ema_decay = to_double(key, v);
        else if (key == "train.trace_every") t.trace_every = to_uint(key, v);
        else if (key == "train.quadrature_points") t.quadrature_points = to_uint(key, v);
        else if (key == "train.instrument") t.instrument = to_bool(key, v);
        else if (key == "strategy") s.kind = strategy_from_string(v);
        else if (key == "strategy.Q") s.query_size = to_uint(key, v);
        else if (key == "strategy.G") s.group_size = to_uint(key, v);
        else if (key == "strategy.R") s.per_class = to_uint(key, v);
        else if (key == "strategy.scope") s.scope = scope_from_string(v);
        else if (key == "strategy.reduction") s.reduction = reduction_from_string(v);
        else if (key == "strategy.positivity") s.positivity_threshold = to_double(key, v);
        else if (key == "initial_per_class") cfg.initial_per_class = to_uint(key, v);
        else if (key == "pivots") {
            cfg.pivots.clear();
            for (const auto& p : split(v, ',')) cfg.pivots.push_back(to_uint(key, p));
        } else if (key == "num_acquisitions") cfg.num_acquisitions = to_uint(key, v);
        else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& p : split(v, ',')) cfg.seeds.push_back(to_uint(key, p));
            if (cfg.seeds.empty()) throw Error(ErrorKind::config, "key 'seeds' is empty");
        } else if (key == "transfer_reseed") cfg.transfer_reseed = to_bool(key, v);
        else if (key == "output") cfg.output_dir = v;
        else throw Error(ErrorKind::config, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (cfg.network.hidden_widths.empty()) cfg.network.hidden_widths = {64};
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
    return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream o;
    const auto& d = cfg.dataset;
    const auto& t = cfg.train;
    const auto& s = cfg.strategy;
    o << "schema_version = " << cfg.schema_version << '\n';
    o << "dataset = " << d.generator << '\n';
    o << "dataset.n = " << d.n << '\n';
    o << "dataset.noise = " << fmt_double(d.noise) << '\n';
    o << "dataset.arms = " << d.arms << '\n';
    o << "dataset.binarize = " << (d.binarize ? "true" : "false") << '\n';
    o << "dataset.classes = " << d.classes << '\n';
    o << "dataset.sigma = " << fmt_double(d.sigma) << '\n';
    std::vector<std::string> rows;
    for (Eigen::Index i = 0; i < d.centers.rows(); ++i) {
        std::vector<std::string> r;
        for (Eigen::Index j = 0; j < d.centers.cols(); ++j) r.push_back(fmt_double(d.centers(i, j)));
        rows.push_back(join(r));
    }
    o << "dataset.centers = " << join(rows, ';') << '\n';
    o << "dataset.path = " << d.path << '\n';
    o << "dataset.test_path = " << d.test_path << '\n';
    o << "dataset.label_column = " << d.label_column << '\n';
    o << "dataset.standardize = " << (d.standardize ? "true" : "false") << '\n';
    o << "dataset.seed = " << d.seed << '\n';
    o << "net.hidden = " << join(cfg.network.hidden_widths) << '\n';
    o << "net.init_scale = " << fmt_double(cfg.network.init_scale) << '\n';
    o << "net.ntk = " << (cfg.network.ntk_parameterization ? "true" : "false") << '\n';
    o << "net.bias = " << (cfg.network.use_bias ? "true" : "false") << '\n';
    o << "train.step_size = " << fmt_double(t.step_size) << '\n';
    o << "train.max_steps = " << t.max_steps << '\n';
    o << "train.patience = " << (t.early_stop_patience ? std::to_string(*t.early_stop_patience) : "none") << '\n';
    o << "train.ssl = " << to_string(t.ssl_mode) << '\n';
    o << "train.consistency_weight = " << fmt_double(t.consistency_weight) << '\n';
    o << "train.sigma = " << fmt_double(t.perturbation_sigma) << '\n';
    o << "train.ema_decay = " << fmt_double(t.ema_decay) << '\n';
    o << "train.trace_every = " << t.trace_every << '\n';
    o << "train.quadrature_points = " << t.quadrature_points << '\n';
    o << "train.instrument = " << (t.instrument ? "true" : "false") << '\n';
    o << "strategy = " << to_string(s.kind) << '\n';
    o << "strategy.Q = " << s.query_size << '\n';
    o << "strategy.G = " << s.group_size << '\n';
    o << "strategy.R = " << s.per_class << '\n';
    o << "strategy.scope = " << to_string(s.scope) << '\n';
    o << "strategy.reduction = " << to_string(s.reduction) << '\n';
    o << "strategy.positivity = " << fmt_double(s.positivity_threshold) << '\n';
    o << "initial_per_class = " << cfg.initial_per_class << '\n';
    o << "pivots = " << join(cfg.pivots) << '\n';
    o << "num_acquisitions = " << cfg.num_acquisitions << '\n';
    o << "seeds = " << join(cfg.seeds) << '\n';
    o << "transfer_reseed = " << (cfg.transfer_reseed ? "true" : "false") << '\n';
    o << "output = " << cfg.output_dir << '\n';
    return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize_config(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream o;
    o << std::hex;
    o.width(16);
    o.fill('0');
    o << h;
    return o.str();
}

// ---------------------------------------------------------------------------
// ASSL loop

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
    std::vector<Eigen::Index> e(idx.begin(), idx.end());
    return m(e, Eigen::all);
}

}  // namespace

RunArtifacts run_assl(const ExperimentConfig& cfg, std::uint64_t seed, const DatasetSplit* data) {
    DatasetSplit owned;
    if (data == nullptr) {
        owned = make_datasets(cfg.dataset);
        data = &owned;
    }
    NetworkSpec spec = cfg.network;
    spec.input_dim = static_cast<std::size_t>(data->train.features.cols());
    spec.num_classes = data->train.num_classes;
    spec.validate();

    Pool pool = cfg.pivots.empty() ? initial_pool(data->train, cfg.initial_per_class, derive_seed(seed, kPoolStream))
                                   : Pool(data->train, cfg.pivots);
    // Labels read while building the initial pool are not oracle peeks.
    const std::size_t reads_before = pool.hidden_label_reads();

    RunArtifacts out;
    out.record.config_hash = config_hash(cfg);
    out.record.strategy = to_string(cfg.strategy.kind);
    out.record.scope = to_string(cfg.strategy.scope);
    out.record.seed = seed;

    for (std::size_t round = 0; round <= cfg.num_acquisitions; ++round) {
        RoundRecord rec;
        rec.round = round;
        rec.labeled_size = pool.labeled().size();
        try {
            const auto train_start = std::chrono::steady_clock::now();
            const std::uint64_t net_seed = derive_seed(seed, cfg.transfer_reseed ? kTransferNetStream : kNetStream, round);
            TrainConfig tc = cfg.train;
            tc.noise_seed = derive_seed(seed, kNoiseStream, round);
            TrainResult trained = train(init_network(spec, net_seed), spec, pool, tc, &data->test);
            rec.train_seconds = seconds_since(train_start);

            const Matrix test_out = forward_batch(trained.params, spec, data->test.features);
            rec.test_accuracy = accuracy(test_out, data->test.labels);
            rec.test_loss = mse_loss(test_out, one_hot(data->test.labels, spec.num_classes));
            rec.train_steps = trained.trace.rows.back().step;
            rec.epochs_to_convergence = epochs_to_convergence(trained.trace, GlobalMinTestLoss{});
            {
                const std::vector<std::size_t> labeled(pool.labeled().begin(), pool.labeled().end());
                rec.labeled_lambda_min_plus = min_positive_eigenvalue(
                    empirical_ntk(trained.params, spec, rows_of(pool.features(), labeled), cfg.strategy.scope,
                                  cfg.strategy.reduction),
                    cfg.strategy.positivity_threshold);
            }

            if (round < cfg.num_acquisitions) {
                const auto acq_start = std::chrono::steady_clock::now();
                const ParamVector acq_model = (cfg.transfer_reseed && round == 0)
                                                  ? init_network(spec, derive_seed(seed, kAcquisitionNetStream))
                                                  : trained.params;
                AcquisitionResult acq =
                    acquire(cfg.strategy, pool, acq_model, spec, derive_seed(seed, kAcquisitionStream, round));
                std::vector<std::size_t> chosen(pool.labeled().begin(), pool.labeled().end());
                chosen.insert(chosen.end(), acq.selected.begin(), acq.selected.end());
                if (!chosen.empty()) {
                    rec.chosen_lambda_min_plus = min_positive_eigenvalue(
                        empirical_ntk(acq_model, spec, rows_of(pool.features(), chosen), cfg.strategy.scope,
                                      cfg.strategy.reduction),
                        cfg.strategy.positivity_threshold);
                }
                pool.reveal(acq.selected);
                rec.selected = std::move(acq.selected);
                rec.scores = std::move(acq.group_scores);
                rec.acquire_seconds = seconds_since(acq_start);
            }
            out.traces.push_back(std::move(trained.trace));
            out.final_params = std::move(trained.params);
        } catch (const Error& e) {
            throw Error(e.kind(), "acquisition round " + std::to_string(round) + ": " + e.what());
        }
        out.record.rounds.push_back(std::move(rec));
    }
    out.record.hidden_label_reads = pool.hidden_label_reads() - reads_before;
    return out;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
    const DatasetSplit data = make_datasets(cfg.dataset);
    NetworkSpec spec = cfg.network;
    spec.input_dim = static_cast<std::size_t>(data.train.features.cols());
    spec.num_classes = data.train.num_classes;
    std::vector<RunRecord> records;
    for (auto seed : cfg.seeds) {
        RunArtifacts run = run_assl(cfg, seed, &data);
        if (!cfg.output_dir.empty()) persist_run(run, spec, cfg.output_dir);
        records.push_back(std::move(run.record));
    }
    return records;
}

void persist_run(const RunArtifacts& run, const NetworkSpec& spec, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    const std::string stem = run.record.strategy + "_" + run.record.scope + "_seed" + std::to_string(run.record.seed);
    auto open = [&](const std::string& name) {
        std::ofstream f(dir / name);
        if (!f) throw Error(ErrorKind::io, "cannot write " + (dir / name).string());
        return f;
    };
    open(stem + ".json") << to_json(run.record).dump(2) << '\n';
    for (std::size_t r = 0; r < run.traces.size(); ++r) {
        auto f = open(stem + "_round" + std::to_string(r) + "_trace.csv");
        write_trace_csv(f, run.traces[r]);
    }
    open(stem + "_model.json") << checkpoint_to_json(spec, run.final_params).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Records

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& v) {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

}  // namespace

nlohmann::json to_json(const RunRecord& record) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : record.rounds) {
        nlohmann::json scores = nlohmann::json::array();
        for (const auto& g : r.scores) scores.push_back({{"members", g.members}, {"score", optional_json(g.score)}, {"nullity", g.nullity}});
        rounds.push_back({{"round", r.round},
                          {"labeled_size", r.labeled_size},
                          {"test_accuracy", r.test_accuracy},
                          {"test_loss", r.test_loss},
                          {"train_steps", r.train_steps},
                          {"epochs_to_convergence", r.epochs_to_convergence},
                          {"labeled_lambda_min_plus", optional_json(r.labeled_lambda_min_plus)},
                          {"selected", r.selected},
                          {"scores", scores},
                          {"chosen_lambda_min_plus", optional_json(r.chosen_lambda_min_plus)},
                          {"train_seconds", r.train_seconds},
                          {"acquire_seconds", r.acquire_seconds}});
    }
    return {{"schema_version", record.schema_version},
            {"config_hash", record.config_hash},
            {"strategy", record.strategy},
            {"scope", record.scope},
            {"seed", record.seed},
            {"hidden_label_reads", record.hidden_label_reads},
            {"rounds", rounds}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    try {
        RunRecord rec;
        rec.schema_version = j.at("schema_version").get<int>();
        if (rec.schema_version != kSchemaVersion) {
            throw Error(ErrorKind::parse, "unsupported record schema_version " + std::to_string(rec.schema_version));
        }
        rec.config_hash = j.at("config_hash").get<std::string>();
        rec.strategy = j.at("strategy").get<std::string>();
        rec.scope = j.at("scope").get<std::string>();
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.hidden_label_reads = j.at("hidden_label_reads").get<std::size_t>();
        for (const auto& r : j.at("rounds")) {
            RoundRecord rr;
            rr.round = r.at("round").get<std::size_t>();
            rr.labeled_size = r.at("labeled_size").get<std::size_t>();
            rr.test_accuracy = r.at("test_accuracy").get<double>();
            rr.test_loss = r.at("test_loss").get<double>();
            rr.train_steps = r.at("train_steps").get<std::size_t>();
            rr.epochs_to_convergence = r.at("epochs_to_convergence").get<std::size_t>();
            rr.labeled_lambda_min_plus = optional_from(r.at("labeled_lambda_min_plus"));
            rr.selected = r.at("selected").get<std::vector<std::size_t>>();
            for (const auto& g : r.at("scores")) {
                rr.scores.push_back({g.at("members").get<std::vector<std::size_t>>(), optional_from(g.at("score")),
                                     g.value("nullity", std::size_t{0})});
            }
            rr.chosen_lambda_min_plus = optional_from(r.at("chosen_lambda_min_plus"));
            rr.train_seconds = r.at("train_seconds").get<double>();
            rr.acquire_seconds = r.at("acquire_seconds").get<double>();
            rec.rounds.push_back(std::move(rr));
        }
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed run record: ") + e.what());
    }
}

std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::io, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> records;
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::parse, f.string() + ": " + e.what());
        }
        if (j.is_object() && j.contains("rounds")) records.push_back(run_record_from_json(j));
    }
    return records;
}

std::vector<SummaryRow> emit_report(const std::vector<RunRecord>& records) {
    if (records.empty()) throw Error(ErrorKind::invalid_argument, "no run records to summarize");
    std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
    for (const auto& rec : records) {
        for (const auto& r : rec.rounds) groups[{rec.strategy, r.labeled_size}].push_back(r.test_accuracy);
    }
    std::vector<SummaryRow> rows;
    for (const auto& [key, accs] : groups) {
        const double n = static_cast<double>(accs.size());
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= n;
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        rows.push_back({key.first, key.second, mean, std::sqrt(var / n), accs.size()});
    }
    return rows;
}

void write_report_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "strategy,labeled_size,mean_accuracy,std_accuracy,count\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.strategy << ',' << r.labeled_size << ',' << r.mean_accuracy << ',' << r.std_accuracy << ','
            << r.count << '\n';
    }
}

// ---------------------------------------------------------------------------
// Decision boundary and checkpoints

std::vector<GridRow> decision_boundary_grid(const ParamVector& params, const NetworkSpec& spec,
                                            const GridBounds& bounds, std::size_t resolution) {
    if (spec.input_dim != 2) throw Error(ErrorKind::dimension, "decision boundary export needs 2-D inputs");
    if (resolution == 0) throw Error(ErrorKind::invalid_argument, "resolution must be positive");
    auto coord = [resolution](double lo, double hi, std::size_t k) {
        return resolution == 1 ? 0.5 * (lo + hi)
                               : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(resolution - 1);
    };
    Matrix X(static_cast<Eigen::Index>(resolution * resolution), 2);
    for (std::size_t r = 0; r < resolution; ++r) {
        for (std::size_t c = 0; c < resolution; ++c) {
            const auto i = static_cast<Eigen::Index>(r * resolution + c);
            X(i, 0) = coord(bounds.x_min, bounds.x_max, c);
            X(i, 1) = coord(bounds.y_min, bounds.y_max, r);
        }
    }
    const Matrix out = forward_batch(params, spec, X);
    std::vector<GridRow> rows(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::Index arg = 0;
        out.row(i).maxCoeff(&arg);
        rows[static_cast<std::size_t>(i)] = {X(i, 0), X(i, 1), static_cast<int>(arg),
                                             softmax(out.row(i).transpose()).maxCoeff()};
    }
    return rows;
}

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
    out << "x,y,class,confidence\n";
    out.precision(10);
    for (const auto& r : rows) out << r.x << ',' << r.y << ',' << r.label << ',' << r.confidence << '\n';
}

nlohmann::json checkpoint_to_json(const NetworkSpec& spec, const ParamVector& params) {
    return {{"schema_version", kSchemaVersion},
            {"network",
             {{"input_dim", spec.input_dim},
              {"hidden_widths", spec.hidden_widths},
              {"num_classes", spec.num_classes},
              {"init_scale", spec.init_scale},
              {"ntk_parameterization", spec.ntk_parameterization},
              {"use_bias", spec.use_bias}}},
            {"params", std::vector<double>(params.values.data(), params.values.data() + params.values.size())}};
}

std::pair<NetworkSpec, ParamVector> checkpoint_from_json(const nlohmann::json& j) {
    try {
        const auto& n = j.at("network");
        NetworkSpec spec;
        spec.input_dim = n.at("input_dim").get<std::size_t>();
        spec.hidden_widths = n.at("hidden_widths").get<std::vector<std::size_t>>();
        spec.num_classes = n.at("num_classes").get<std::size_t>();
        spec.init_scale = n.at("init_scale").get<double>();
        spec.ntk_parameterization = n.at("ntk_parameterization").get<bool>();
        spec.use_bias = n.at("use_bias").get<bool>();
        ParamVector params = make_params(spec);
        const auto values = j.at("params").get<std::vector<double>>();
        if (values.size() != params.size()) {
            throw Error(ErrorKind::parse, "checkpoint has " + std::to_string(values.size()) +
                                              " parameters, network needs " + std::to_string(params.size()));
        }
        params.values = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
        return {spec, params};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed checkpoint: ") + e.what());
    }
}

std::pair<NetworkSpec, ParamVector> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace crc
