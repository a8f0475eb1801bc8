// Command-line front end: dataset generation, training, evaluation, ablation
// tables, and the built-in verification battery. Every run is reproducible
// from its manifest; all randomness flows from the config seeds.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccm/checkpoint.hpp"
#include "ccm/config.hpp"
#include "ccm/data.hpp"
#include "ccm/trainer.hpp"
#include "ccm/verify.hpp"
#include "ccm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

using Clock = std::chrono::steady_clock;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ccm::IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw ccm::IoError("failed writing " + path.string());
}

void write_manifest(const fs::path& out_dir, const json& config_echo, const json& spec_echo,
                    const std::vector<std::string>& artifacts, double seconds) {
    json artifact_paths = json::array();
    for (const std::string& a : artifacts) artifact_paths.push_back(a);
    json manifest{{"tool_version", ccm::kVersion},
                  {"config", config_echo},
                  {"dataset_spec", spec_echo},
                  {"artifacts", artifact_paths},
                  {"wall_clock_seconds", seconds}};
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::exists(path)) {
        throw ccm::ConfigError(std::string(what) + " not found: " + path.string());
    }
}

int cmd_generate(const fs::path& spec_path, const fs::path& out_path, bool quiet) {
    require_file(spec_path, "dataset spec file");
    const ccm::DatasetSpec spec = ccm::load_dataset_spec(spec_path);
    if (fs::exists(out_path)) {
        // Idempotent rerun: the existing file must belong to this spec.
        ccm::load_dataset(out_path, &spec);
    }
    ccm::Dataset dataset{spec, ccm::generate(spec)};
    ccm::save_dataset(out_path, dataset);
    if (!quiet) {
        std::cout << "wrote " << out_path.string() << " (" << spec.num_domains << " domains x "
                  << spec.samples_per_domain << " samples)\n";
    }
    return kExitOk;
}

ccm::TrainConfig resolve_config(const fs::path& config_path, const std::string& loss_flags,
                                const std::string& prediction_mode) {
    require_file(config_path, "config file");
    ccm::TrainConfig config = ccm::load_train_config(config_path);
    if (!loss_flags.empty()) config.loss_flags = ccm::loss_flags_from_string(loss_flags);
    if (!prediction_mode.empty()) {
        config.prediction_mode = ccm::prediction_mode_from_string(prediction_mode);
    }
    config.validate();
    return config;
}

int cmd_train(const fs::path& config_path, const fs::path& dataset_path, const fs::path& out_dir,
              const std::string& loss_flags, const std::string& prediction_mode, bool quiet) {
    const auto start = Clock::now();
    const ccm::TrainConfig config = resolve_config(config_path, loss_flags, prediction_mode);
    require_file(dataset_path, "dataset file");
    const ccm::Dataset dataset = ccm::load_dataset(dataset_path);
    fs::create_directories(out_dir);

    const ccm::FitResult result = ccm::fit(config, dataset);

    const fs::path metrics_path = out_dir / "metrics.jsonl";
    const fs::path checkpoint_path = out_dir / "checkpoint.ckpt";
    write_text(metrics_path, ccm::metrics_to_jsonl(result, config));
    ccm::save_checkpoint(checkpoint_path, result.bundle,
                         result.queue.empty() ? nullptr : &result.queue,
                         ccm::to_json(config).dump());
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    write_manifest(out_dir, ccm::to_json(config), ccm::to_json(dataset.spec),
                   {metrics_path.string(), checkpoint_path.string()}, seconds);
    if (!quiet) {
        std::cout << "best_epoch=" << result.best_epoch << " val_accuracy=" << result.val_accuracy
                  << " test_accuracy=" << result.test_accuracy << "\n";
    }
    return kExitOk;
}

int cmd_evaluate(const fs::path& checkpoint_path, const fs::path& dataset_path,
                 const std::string& prediction_mode, bool quiet) {
    require_file(checkpoint_path, "checkpoint file");
    require_file(dataset_path, "dataset file");
    const ccm::Checkpoint checkpoint = ccm::load_checkpoint(checkpoint_path);
    const ccm::Dataset dataset = ccm::load_dataset(dataset_path);

    ccm::PredictionMode mode = ccm::PredictionMode::frontdoor;
    if (!prediction_mode.empty()) {
        mode = ccm::prediction_mode_from_string(prediction_mode);
    } else if (!checkpoint.config_echo.empty()) {
        mode = ccm::parse_train_config(json::parse(checkpoint.config_echo)).prediction_mode;
    }
    const ccm::KnowledgeQueue* queue =
        checkpoint.queue && !checkpoint.queue->empty() ? &*checkpoint.queue : nullptr;

    double tau = 0.07;
    if (!checkpoint.config_echo.empty()) {
        tau = ccm::parse_train_config(json::parse(checkpoint.config_echo)).tau;
    }

    json per_domain = json::object();
    for (const auto& [domain, samples] : dataset.domains) {
        per_domain[std::to_string(domain)] =
            ccm::evaluate(checkpoint.bundle, queue, samples, mode, tau);
    }
    json report{{"prediction_mode", ccm::to_string(mode)}, {"per_domain_accuracy", per_domain}};
    std::cout << report.dump(quiet ? -1 : 2) << "\n";
    return kExitOk;
}

std::string format_accuracy(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

int cmd_ablate(const fs::path& config_path, const fs::path& dataset_path,
               const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, bool quiet) {
    const auto start = Clock::now();
    if (seeds.empty()) throw ccm::ConfigError("ablate: at least one seed is required");
    const ccm::TrainConfig base_config = resolve_config(config_path, "", "");
    require_file(dataset_path, "dataset file");
    const ccm::Dataset dataset = ccm::load_dataset(dataset_path);
    fs::create_directories(out_dir);

    // rows[config][seed]
    std::vector<std::vector<ccm::AblationRow>> per_seed;
    for (std::uint64_t seed : seeds) {
        ccm::TrainConfig config = base_config;
        config.seed = seed;
        per_seed.push_back(ccm::run_ablation(config, dataset));
        if (!quiet) std::cout << "seed " << seed << " done\n";
    }

    std::ostringstream table;
    table << "flags,val_acc,test_acc,seed\n";
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        for (const ccm::AblationRow& row : per_seed[s]) {
            table << ccm::loss_flags_to_string(row.flags) << ","
                  << format_accuracy(row.val_accuracy) << ","
                  << format_accuracy(row.test_accuracy) << "," << seeds[s] << "\n";
        }
    }
    // Aggregates in the usual mean +/- std presentation.
    const std::size_t rows_per_seed = per_seed.front().size();
    for (std::size_t r = 0; r < rows_per_seed; ++r) {
        double val_mean = 0.0, test_mean = 0.0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            val_mean += per_seed[s][r].val_accuracy;
            test_mean += per_seed[s][r].test_accuracy;
        }
        val_mean /= static_cast<double>(seeds.size());
        test_mean /= static_cast<double>(seeds.size());
        double val_var = 0.0, test_var = 0.0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            val_var += std::pow(per_seed[s][r].val_accuracy - val_mean, 2);
            test_var += std::pow(per_seed[s][r].test_accuracy - test_mean, 2);
        }
        val_var /= static_cast<double>(seeds.size());
        test_var /= static_cast<double>(seeds.size());
        table << ccm::loss_flags_to_string(per_seed.front()[r].flags) << ","
              << format_accuracy(val_mean) << "±" << format_accuracy(std::sqrt(val_var)) << ","
              << format_accuracy(test_mean) << "±" << format_accuracy(std::sqrt(test_var))
              << ",aggregate\n";
    }

    const fs::path table_path = out_dir / "ablation.csv";
    write_text(table_path, table.str());
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    write_manifest(out_dir, ccm::to_json(base_config), ccm::to_json(dataset.spec),
                   {table_path.string()}, seconds);
    if (!quiet) std::cout << "wrote " << table_path.string() << "\n";
    return kExitOk;
}

int cmd_verify(bool quiet) {
    const std::vector<ccm::CheckResult> results = ccm::run_verification();
    std::size_t name_width = 0;
    for (const auto& r : results) name_width = std::max(name_width, r.name.size());
    for (const auto& r : results) {
        std::cout << std::left << std::setw(static_cast<int>(name_width) + 2) << r.name
                  << (r.passed ? "PASS" : "FAIL") << "  " << std::fixed << std::setprecision(2)
                  << r.seconds << "s";
        if (!quiet || !r.passed) std::cout << "  " << r.detail;
        std::cout << "\n";
    }
    if (!ccm::all_passed(results)) {
        std::cout << "verification FAILED\n";
        return kExitRuntime;
    }
    std::cout << "all checks passed\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive causal training on synthetic multi-domain data"};
    app.set_version_flag("--version", std::string(ccm::kVersion));
    app.require_subcommand(1);
    app.fallthrough();  // --quiet may follow the subcommand name

    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress output");

    std::string config_path, dataset_path, out_path, spec_path, checkpoint_path;
    std::string loss_flags, prediction_mode;
    std::vector<std::uint64_t> seeds;

    CLI::App* generate = app.add_subcommand("generate", "generate a dataset cache from a spec");
    generate->add_option("--spec", spec_path, "dataset spec JSON")->required();
    generate->add_option("--out", out_path, "output dataset file")->required();

    CLI::App* train = app.add_subcommand("train", "train and write checkpoint + metrics");
    train->add_option("--config", config_path, "train config JSON")->required();
    train->add_option("--dataset", dataset_path, "dataset cache file")->required();
    train->add_option("--out", out_path, "output directory")->required();
    train->add_option("--loss-flags", loss_flags, "override loss flags, e.g. teach,learn,cs");
    train->add_option("--prediction-mode", prediction_mode, "classifier or frontdoor");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
    evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    evaluate->add_option("--dataset", dataset_path, "dataset cache file")->required();
    evaluate->add_option("--prediction-mode", prediction_mode, "classifier or frontdoor");

    CLI::App* ablate = app.add_subcommand("ablate", "run the five-row loss ablation per seed");
    ablate->add_option("--config", config_path, "train config JSON")->required();
    ablate->add_option("--dataset", dataset_path, "dataset cache file")->required();
    ablate->add_option("--seeds", seeds, "seeds, e.g. --seeds 0 1 2 or --seeds 0,1,2")
        ->required()
        ->delimiter(',');
    ablate->add_option("--out", out_path, "output directory")->required();

    CLI::App* verify = app.add_subcommand("verify", "run the built-in verification battery");
    (void)verify;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;  // help/version exit clean
    }

    try {
        if (generate->parsed()) return cmd_generate(spec_path, out_path, quiet);
        if (train->parsed()) {
            return cmd_train(config_path, dataset_path, out_path, loss_flags, prediction_mode,
                             quiet);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(checkpoint_path, dataset_path, prediction_mode, quiet);
        }
        if (ablate->parsed()) return cmd_ablate(config_path, dataset_path, seeds, out_path, quiet);
        if (verify->parsed()) return cmd_verify(quiet);
    } catch (const ccm::ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ccm::IoError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitRuntime;
}
