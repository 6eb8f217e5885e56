#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "crc/error.hpp"
#include "crc/experiment.hpp"

using namespace crc;
namespace fs = std::filesystem;

namespace {

double distance_to_arc(double x, double y, const MoonArc& arc) {
    const double dx = (x - arc.center_x) * arc.orientation;
    const double dy = (y - arc.center_y) * arc.orientation;
    if (dy >= 0.0) return std::abs(std::hypot(dx, dy) - 1.0);
    return std::min(std::hypot(dx - 1.0, dy), std::hypot(dx + 1.0, dy));
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("crc_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.dataset.n = 80;
    cfg.dataset.arms = 4;
    cfg.network.hidden_widths = {16};
    cfg.network.use_bias = true;
    cfg.train.step_size = 0.02;
    cfg.train.max_steps = 20;
    cfg.train.trace_every = 5;
    cfg.strategy.query_size = 4;
    cfg.strategy.group_size = 2;
    cfg.initial_per_class = 1;
    cfg.num_acquisitions = 2;
    cfg.seeds = {3};
    return cfg;
}

RunRecord record_with(const std::string& strategy, std::uint64_t seed, double acc) {
    RunRecord rec;
    rec.strategy = strategy;
    rec.seed = seed;
    RoundRecord r;
    r.labeled_size = 8;
    r.test_accuracy = acc;
    rec.rounds.push_back(r);
    return rec;
}

}  // namespace

TEST_CASE("noise-free moons lie on their arcs") {
    const Dataset d = generate_moons(200, 0.0, 4, 1);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto arc = moon_arc(static_cast<std::size_t>(d.labels[i]));
        const auto r = static_cast<Eigen::Index>(i);
        CHECK(distance_to_arc(d.features(r, 0), d.features(r, 1), arc) <= 1e-12);
    }
}

TEST_CASE("moons are balanced, deterministic and validated") {
    const Dataset d = generate_moons(103, 0.1, 4, 2);
    std::vector<int> counts(4, 0);
    for (int y : d.labels) ++counts[static_cast<std::size_t>(y)];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
    CHECK(generate_moons(103, 0.1, 4, 2).features == d.features);
    CHECK(generate_moons(103, 0.1, 4, 3).features != d.features);

    const Dataset b = generate_moons(10, 0.1, 4, 2, true);
    CHECK(b.num_classes == 2);
    CHECK(b.labels[3] == 1);
    CHECK_THROWS_AS((void)generate_moons(10, 0.1, 3, 0), Error);
    CHECK_THROWS_AS((void)generate_moons(3, 0.1, 4, 0), Error);
}

TEST_CASE("nearest-arc classification of noisy moons") {
    const Dataset d = generate_moons(2000, 0.05, 4, 4);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t arm = 0; arm < 4; ++arm) {
            const double dist = distance_to_arc(d.features(r, 0), d.features(r, 1), moon_arc(arm));
            if (dist < best_d) {
                best_d = dist;
                best = arm;
            }
        }
        if (static_cast<int>(best) == d.labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / 2000.0 >= 0.99);
}

TEST_CASE("blobs") {
    const Matrix centers = (Matrix(3, 2) << 0, 0, 5, 1, -2, 4).finished();
    const Dataset exact = generate_blobs(30, 3, centers, 0.0, 1);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(exact.features.row(static_cast<Eigen::Index>(i)) == centers.row(static_cast<Eigen::Index>(i % 3)));
    }

    const double sigma = 0.7;
    const std::size_t n = 3000;
    const Dataset d = generate_blobs(n, 3, centers, sigma, 2);
    CHECK(generate_blobs(n, 3, centers, sigma, 2).features == d.features);
    for (Eigen::Index c = 0; c < 3; ++c) {
        Eigen::RowVector2d mean = Eigen::RowVector2d::Zero();
        for (std::size_t i = static_cast<std::size_t>(c); i < n; i += 3) mean += d.features.row(static_cast<Eigen::Index>(i));
        mean /= static_cast<double>(n / 3);
        const double bound = 4.0 * sigma / std::sqrt(static_cast<double>(n / 3));
        CHECK((mean - centers.row(c)).cwiseAbs().maxCoeff() <= bound);
    }
    CHECK_THROWS_AS((void)generate_blobs(30, 2, centers, 0.1, 0), Error);
}

TEST_CASE("hand-written CSV becomes an exact dataset") {
    std::istringstream in("a,label,b\n1.5,5,2\n-1,2,0.25\n3,5,4\n");
    const Dataset d = parse_csv_dataset(in, "label");
    CHECK(d.num_classes == 2);
    CHECK(d.labels == std::vector<int>{0, 1, 0});
    CHECK(d.features == (Matrix(3, 2) << 1.5, 2, -1, 0.25, 3, 4).finished());
}

TEST_CASE("CSV errors name the row and column") {
    std::istringstream bad("x,label\n1,0\n2,zz\n");
    try {
        (void)parse_csv_dataset(bad, "label");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
        CHECK(std::string(e.what()).find("row 2") != std::string::npos);
        CHECK(std::string(e.what()).find("'label'") != std::string::npos);
    }
    std::istringstream ragged("x,label\n1,0,5\n");
    CHECK_THROWS_AS((void)parse_csv_dataset(ragged, "label"), Error);
    std::istringstream nolabel("x,y\n1,0\n");
    CHECK_THROWS_AS((void)parse_csv_dataset(nolabel, "label"), Error);
    CHECK_THROWS_AS((void)load_csv_dataset("/nonexistent/file.csv", "label"), Error);
}

TEST_CASE("CSV export and import round trip") {
    const Dataset d = generate_moons(50, 0.1, 4, 5);
    std::stringstream buf;
    write_csv_dataset(buf, d);
    const Dataset back = parse_csv_dataset(buf, "label");
    CHECK(back.features == d.features);
    CHECK(back.num_classes == 4);
    // Labels are re-indexed by first appearance, and moons emit arms in order.
    CHECK(back.labels == d.labels);
}

TEST_CASE("shared label order across two CSV files") {
    std::vector<std::string> order;
    std::istringstream train("x,label\n1,4\n2,3\n");
    std::istringstream test("x,label\n1,3\n2,4\n");
    const Dataset tr = parse_csv_dataset(train, "label", "train", &order);
    const Dataset te = parse_csv_dataset(test, "label", "test", &order);
    CHECK(tr.labels == std::vector<int>{0, 1});
    CHECK(te.labels == std::vector<int>{1, 0});
    CHECK(order == std::vector<std::string>{"4", "3"});
}

TEST_CASE("initial pool draws per_class labels per class") {
    const Dataset d = generate_moons(40, 0.1, 4, 6);
    const Pool pool = initial_pool(d, 1, 7);
    REQUIRE(pool.labeled().size() == 4);
    std::set<int> classes;
    for (auto i : pool.labeled()) classes.insert(d.labels[i]);
    CHECK(classes.size() == 4);
    const Pool again = initial_pool(d, 1, 7);
    CHECK(std::equal(pool.labeled().begin(), pool.labeled().end(), again.labeled().begin()));
    CHECK(pool.hidden_label_reads() == 0);
    CHECK_THROWS_AS((void)initial_pool(d, 11, 0), Error);

    // 10 members per class: each should be drawn ~100 times in 1000 seeds.
    std::vector<int> counts(40, 0);
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const Pool drawn = initial_pool(d, 1, s);
        for (auto i : drawn.labeled()) ++counts[i];
    }
    const double sd = std::sqrt(1000.0 * 0.1 * 0.9);
    for (int c : counts) CHECK(std::abs(c - 100.0) <= 4.0 * sd);
}

TEST_CASE("pool oracle counts hidden reads") {
    const Dataset d = generate_moons(8, 0.1, 2, 8);
    Pool pool(d, {0, 1});
    CHECK(pool.label_of_labeled(0) == d.labels[0]);
    CHECK_THROWS_AS((void)pool.label_of_labeled(2), Error);
    CHECK(pool.hidden_label_reads() == 0);
    CHECK(pool.peek_hidden_label(5) == d.labels[5]);
    CHECK(pool.hidden_label_reads() == 1);
    const std::vector<std::size_t> take{5};
    pool.reveal(take);
    CHECK(pool.is_labeled(5));
    CHECK(pool.unlabeled().size() == 5);
    CHECK_THROWS_AS(pool.reveal(take), Error);
}

TEST_CASE("config text round trip and errors") {
    ExperimentConfig cfg = small_config();
    cfg.dataset.generator = "blobs";
    cfg.dataset.classes = 3;
    cfg.dataset.centers = (Matrix(3, 2) << 0, 0, 1, 2, -3, 0.5).finished();
    cfg.train.early_stop_patience = 7;
    cfg.train.ssl_mode = SslMode::mean_teacher;
    cfg.strategy.kind = StrategyKind::crc_balanced;
    cfg.strategy.scope = GradientScope::full;
    cfg.strategy.reduction = Reduction::blocked;
    cfg.pivots = {1, 5, 9};
    cfg.seeds = {0, 1, 2};
    cfg.transfer_reseed = true;
    cfg.output_dir = "out dir";
    const std::string text = serialize_config(cfg);
    std::istringstream in(text);
    const ExperimentConfig back = parse_config(in);
    CHECK(serialize_config(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(config_hash(back).size() == 16);
    CHECK(back.dataset.centers == cfg.dataset.centers);
    CHECK(*back.train.early_stop_patience == 7);

    std::istringstream unknown("# comment\n\nnet.hidden = 8\nnet.wings = 2\n");
    try {
        (void)parse_config(unknown);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
    std::istringstream bad_number("train.step_size = fast\n");
    CHECK_THROWS_AS((void)parse_config(bad_number), Error);
    CHECK_THROWS_AS((void)strategy_from_string("oracle"), Error);
    CHECK(to_string(strategy_from_string("crc_balanced")) == "crc_balanced");
}

TEST_CASE("run_assl with no acquisitions trains once") {
    ExperimentConfig cfg = small_config();
    cfg.num_acquisitions = 0;
    const RunArtifacts run = run_assl(cfg, 3);
    REQUIRE(run.record.rounds.size() == 1);
    CHECK(run.record.rounds[0].selected.empty());
    CHECK(run.record.rounds[0].labeled_size == 4);
    CHECK(run.traces.size() == 1);
}

TEST_CASE("random and CRC runs share the initial pool and grow by Q") {
    ExperimentConfig cfg = small_config();
    cfg.strategy.kind = StrategyKind::random;
    const RunArtifacts random_run = run_assl(cfg, 3);
    cfg.strategy.kind = StrategyKind::crc;
    const RunArtifacts crc_run = run_assl(cfg, 3);
    REQUIRE(random_run.record.rounds.size() == 3);
    REQUIRE(crc_run.record.rounds.size() == 3);
    CHECK(random_run.record.rounds[0].test_accuracy == crc_run.record.rounds[0].test_accuracy);
    CHECK(random_run.record.rounds[0].labeled_size == crc_run.record.rounds[0].labeled_size);
    CHECK(random_run.record.rounds[0].selected != crc_run.record.rounds[0].selected);
    for (std::size_t k = 0; k < 3; ++k) CHECK(crc_run.record.rounds[k].labeled_size == 4 + 4 * k);
    CHECK(crc_run.record.hidden_label_reads == 0);
    CHECK(random_run.record.hidden_label_reads == 0);

    const RunArtifacts repeat = run_assl(cfg, 3);
    CHECK(repeat.record.rounds[2].test_accuracy == crc_run.record.rounds[2].test_accuracy);
    CHECK(repeat.record.rounds[1].selected == crc_run.record.rounds[1].selected);
}

TEST_CASE("balanced CRC is the only strategy that reads hidden labels") {
    ExperimentConfig cfg = small_config();
    cfg.num_acquisitions = 1;
    for (auto kind : {StrategyKind::random, StrategyKind::entropy, StrategyKind::confidence, StrategyKind::egl,
                      StrategyKind::crc}) {
        cfg.strategy.kind = kind;
        CHECK(run_assl(cfg, 1).record.hidden_label_reads == 0);
    }
    cfg.strategy.kind = StrategyKind::crc_balanced;
    CHECK(run_assl(cfg, 1).record.hidden_label_reads > 0);
}

TEST_CASE("records persist, reload and summarize") {
    const fs::path dir = fresh_dir("records");
    ExperimentConfig cfg = small_config();
    cfg.output_dir = dir.string();
    cfg.seeds = {0, 1};
    const auto records = run_experiment(cfg);
    CHECK(fs::exists(dir / "crc_last_layer_seed0.json"));
    CHECK(fs::exists(dir / "crc_last_layer_seed1_round2_trace.csv"));
    CHECK(fs::exists(dir / "crc_last_layer_seed0_model.json"));

    const auto loaded = load_records(dir);
    REQUIRE(loaded.size() == 2);
    CHECK(to_json(loaded[0]) == to_json(records[0]));
    CHECK(loaded[0].config_hash == config_hash(cfg));

    const auto rows = emit_report(loaded);
    std::size_t covered = 0;
    for (const auto& r : rows) covered += r.count;
    CHECK(covered == 6);
    CHECK(rows.size() == 3);

    const auto [spec, params] = load_checkpoint(dir / "crc_last_layer_seed0_model.json");
    CHECK(spec.hidden_widths == std::vector<std::size_t>{16});
    CHECK(spec.input_dim == 2);
    CHECK(spec.num_classes == 4);
    CHECK(params.size() == spec.parameter_count());
    fs::remove_all(dir);
}

TEST_CASE("report arithmetic") {
    const auto single = emit_report({record_with("crc", 0, 0.7)});
    REQUIRE(single.size() == 1);
    CHECK(single[0].std_accuracy == 0.0);

    const auto two = emit_report({record_with("crc", 0, 0.8), record_with("crc", 1, 0.9),
                                  record_with("random", 0, 0.5)});
    REQUIRE(two.size() == 2);
    CHECK(two[0].strategy == "crc");
    CHECK(two[0].mean_accuracy == doctest::Approx(0.85));
    CHECK(two[0].std_accuracy == doctest::Approx(0.05));
    CHECK(two[0].count == 2);
    CHECK_THROWS_AS((void)emit_report({}), Error);

    std::ostringstream out;
    write_report_csv(out, two);
    CHECK(out.str().rfind("strategy,labeled_size,mean_accuracy,std_accuracy,count\ncrc,8,0.85,0.05,2\n", 0) == 0);
}

TEST_CASE("run record JSON rejects malformed input") {
    CHECK_THROWS_AS((void)run_record_from_json(nlohmann::json::parse(R"({"rounds": 3})")), Error);
    RunRecord rec = record_with("crc", 4, 0.6);
    rec.rounds[0].scores.push_back({{1, 2}, 0.5, 1});
    rec.rounds[0].labeled_lambda_min_plus = 0.25;
    const RunRecord back = run_record_from_json(to_json(rec));
    CHECK(to_json(back) == to_json(rec));
    CHECK(back.rounds[0].scores[0].nullity == 1);
}

TEST_CASE("decision boundary grid") {
    const NetworkSpec zero_spec{2, {4}, 3, 0.0, true, true};
    const ParamVector zero = init_network(zero_spec, 0);
    const auto flat = decision_boundary_grid(zero, zero_spec, {}, 5);
    CHECK(flat.size() == 25);
    for (const auto& row : flat) {
        CHECK(row.label == 0);
        CHECK(row.confidence == doctest::Approx(1.0 / 3.0));
    }
    CHECK(flat[1].x == doctest::Approx(-0.5));
    CHECK(flat[1].y == doctest::Approx(-1.0));
    CHECK(flat[5].y == doctest::Approx(-0.5));

    const NetworkSpec spec{2, {16}, 4, 1.0, true, true};
    const ParamVector p = init_network(spec, 9);
    const Dataset d = generate_moons(8, 0.1, 4, 10);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const GridBounds b{d.features(i, 0), d.features(i, 0) + 1.0, d.features(i, 1), d.features(i, 1) + 1.0};
        const auto grid = decision_boundary_grid(p, spec, b, 3);
        Eigen::Index arg = 0;
        forward(p, spec, d.features.row(i).transpose()).maxCoeff(&arg);
        CHECK(grid[0].label == arg);
    }
    const auto mid = decision_boundary_grid(p, spec, {0.0, 2.0, 0.0, 4.0}, 1);
    REQUIRE(mid.size() == 1);
    CHECK(mid[0].x == 1.0);
    CHECK(mid[0].y == 2.0);

    const NetworkSpec three_d{3, {4}, 2};
    CHECK_THROWS_AS((void)decision_boundary_grid(init_network(three_d, 0), three_d, {}, 3), Error);

    std::ostringstream out;
    write_grid_csv(out, mid);
    CHECK(out.str().rfind("x,y,class,confidence\n", 0) == 0);
}

TEST_CASE("checkpoint round trip") {
    const NetworkSpec spec{2, {5, 3}, 2, 0.5, false, true};
    const ParamVector p = init_network(spec, 11);
    const auto [s, q] = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(spec, p).dump()));
    CHECK(s.hidden_widths == spec.hidden_widths);
    CHECK(s.ntk_parameterization == false);
    CHECK(s.use_bias == true);
    CHECK(q.values == p.values);
    nlohmann::json broken = checkpoint_to_json(spec, p);
    broken["params"].erase(0);
    CHECK_THROWS_AS((void)checkpoint_from_json(broken), Error);
}

TEST_CASE("csv experiment data shares labels between files") {
    const fs::path dir = fresh_dir("csvdata");
    {
        std::ofstream(dir / "train.csv") << "x,y,label\n0,0,7\n1,1,9\n";
        std::ofstream(dir / "test.csv") << "x,y,label\n1,1,9\n0,0,7\n";
        std::ofstream(dir / "bad.csv") << "x,y,label\n1,1,3\n";
    }
    DatasetConfig dc;
    dc.generator = "csv";
    dc.path = (dir / "train.csv").string();
    dc.test_path = (dir / "test.csv").string();
    const DatasetSplit split = make_datasets(dc);
    CHECK(split.test.labels == std::vector<int>{1, 0});
    dc.test_path = (dir / "bad.csv").string();
    CHECK_THROWS_AS((void)make_datasets(dc), Error);
    fs::remove_all(dir);
}

TEST_CASE("standardized datasets use training statistics") {
    DatasetConfig dc;
    dc.n = 200;
    dc.seed = 4;
    const DatasetSplit raw = make_datasets(dc);
    dc.standardize = true;
    const DatasetSplit std_split = make_datasets(dc);
    const Eigen::RowVectorXd mean = std_split.train.features.colwise().mean();
    const Eigen::RowVectorXd var = std_split.train.features.array().square().colwise().mean();
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(std_split.train.labels == raw.train.labels);

    const Eigen::RowVectorXd mu = raw.train.features.colwise().mean();
    const Eigen::RowVectorXd sd = (raw.train.features.rowwise() - mu).array().square().colwise().mean().sqrt();
    const Matrix expected = ((raw.test.features.rowwise() - mu).array().rowwise() / sd.array()).matrix();
    CHECK((std_split.test.features - expected).cwiseAbs().maxCoeff() < 1e-12);

    ExperimentConfig cfg;
    cfg.dataset.standardize = true;
    std::istringstream text(serialize_config(cfg));
    CHECK(parse_config(text).dataset.standardize);
}
