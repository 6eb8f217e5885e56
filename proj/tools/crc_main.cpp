#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "crc/diagnostics.hpp"
#include "crc/error.hpp"
#include "crc/experiment.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckFailed = 3;

// Writes to `path`, or stdout when it is empty or "-".
template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
    if (path.empty() || path == "-") {
        fn(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw crc::Error(crc::ErrorKind::io, "cannot write " + path);
    fn(out);
}

int cmd_run(const std::string& config_path, const std::string& output_override) {
    crc::ExperimentConfig cfg = crc::load_config(config_path);
    if (!output_override.empty()) cfg.output_dir = output_override;
    const auto records = crc::run_experiment(cfg);
    crc::write_report_csv(std::cout, crc::emit_report(records));
    return 0;
}

int cmd_report(const std::string& dir, const std::string& out) {
    const auto rows = crc::emit_report(crc::load_records(dir));
    with_output(out, [&](std::ostream& os) { crc::write_report_csv(os, rows); });
    return 0;
}

int cmd_boundary(const std::string& checkpoint, const crc::GridBounds& bounds, std::size_t resolution,
                 const std::string& out) {
    const auto [spec, params] = crc::load_checkpoint(checkpoint);
    const auto rows = crc::decision_boundary_grid(params, spec, bounds, resolution);
    with_output(out, [&](std::ostream& os) { crc::write_grid_csv(os, rows); });
    return 0;
}

int cmd_verify(std::uint64_t seed) {
    const auto results = crc::run_property_suite(seed);
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        failed += r.passed ? 0 : 1;
    }
    if (failed > 0) {
        std::cerr << "error[verify]: " << failed << " of " << results.size() << " checks failed\n";
        return kExitCheckFailed;
    }
    return 0;
}

int cmd_gen_data(const crc::DatasetConfig& cfg, bool test_split, const std::string& out) {
    const crc::DatasetSplit split = crc::make_datasets(cfg);
    with_output(out, [&](std::ostream& os) { crc::write_csv_dataset(os, test_split ? split.test : split.train); });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convergence-rate-control active learning toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string run_output;
    auto* run = app.add_subcommand("run", "Run an active learning experiment from a config file");
    run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--output", run_output, "Override the config's output directory");

    std::string records_dir;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Summarize run records as CSV");
    report->add_option("records", records_dir, "Directory of run record JSON files")->required();
    report->add_option("-o,--out", report_out, "Output CSV (default stdout)");

    std::string checkpoint;
    crc::GridBounds bounds;
    std::size_t resolution = 100;
    std::string grid_out;
    auto* boundary = app.add_subcommand("boundary", "Export a decision-boundary grid from a model checkpoint");
    boundary->add_option("checkpoint", checkpoint, "Model checkpoint JSON")->required()->check(CLI::ExistingFile);
    boundary->add_option("--x-min", bounds.x_min, "Grid x lower bound");
    boundary->add_option("--x-max", bounds.x_max, "Grid x upper bound");
    boundary->add_option("--y-min", bounds.y_min, "Grid y lower bound");
    boundary->add_option("--y-max", bounds.y_max, "Grid y upper bound");
    boundary->add_option("-r,--resolution", resolution, "Points per axis");
    boundary->add_option("-o,--out", grid_out, "Output CSV (default stdout)");

    std::uint64_t verify_seed = 0;
    auto* verify = app.add_subcommand("verify", "Run the invariant property suite");
    verify->add_option("--seed", verify_seed, "Seed for the randomized checks");

    crc::DatasetConfig data;
    bool test_split = false;
    std::string data_out;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
    gen->add_option("--generator", data.generator, "moons or blobs")->check(CLI::IsMember({"moons", "blobs"}));
    gen->add_option("-n,--n", data.n, "Number of samples");
    gen->add_option("--noise", data.noise, "Moons noise sigma");
    gen->add_option("--arms", data.arms, "Moon arms (2 or 4)");
    gen->add_flag("--binarize", data.binarize, "Moons class = arm parity");
    gen->add_option("--classes", data.classes, "Blob classes");
    gen->add_option("--sigma", data.sigma, "Blob sigma");
    gen->add_flag("--standardize", data.standardize, "Scale features with training mean and std");
    gen->add_option("--seed", data.seed, "Generator seed");
    gen->add_flag("--test", test_split, "Emit the held-out test split instead");
    gen->add_option("-o,--out", data_out, "Output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*run) return cmd_run(config_path, run_output);
        if (*report) return cmd_report(records_dir, report_out);
        if (*boundary) return cmd_boundary(checkpoint, bounds, resolution, grid_out);
        if (*verify) return cmd_verify(verify_seed);
        if (*gen) {
            if (data.generator == "blobs") {
                data.centers = crc::Matrix::Zero(static_cast<Eigen::Index>(data.classes), 2);
                for (std::size_t c = 0; c < data.classes; ++c) {
                    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(data.classes);
                    data.centers(static_cast<Eigen::Index>(c), 0) = 2.0 * std::cos(angle);
                    data.centers(static_cast<Eigen::Index>(c), 1) = 2.0 * std::sin(angle);
                }
            }
            return cmd_gen_data(data, test_split, data_out);
        }
    } catch (const crc::Error& e) {
        std::cerr << "error[" << crc::to_string(e.kind()) << "]: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << '\n';
        return kExitError;
    }
    return kExitUsage;
}
