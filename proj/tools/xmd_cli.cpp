#include "xmd/config.hpp"
#include "xmd/corpus.hpp"
#include "xmd/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal dilution benchmark"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("-c,--config", config_path, "Experiment config (YAML)");
    app.add_option("--set", overrides, "Override a config key: dotted.key=value")->take_all();
    app.add_flag("-q,--quiet", quiet, "No progress output");

    auto* data = app.add_subcommand("data", "Dataset utilities");
    data->require_subcommand(1);
    data->fallthrough();
    auto* synth = data->add_subcommand("synth", "Write the configured synthetic dataset as JSONL + PNG");
    std::string synth_out;
    synth->add_option("out", synth_out, "Output directory")->required();
    auto* validate = data->add_subcommand("validate", "Load and check a JSONL dataset");
    std::string validate_path;
    validate->add_option("path", validate_path, "dataset.jsonl")->required();

    auto* train = app.add_subcommand("train", "Train models");
    train->require_subcommand(1);
    train->fallthrough();
    auto* train_cls = train->add_subcommand("classifier", "Unimodal and fusion classifiers");
    auto* train_gen = train->add_subcommand("generator", "Both generator stages for every seed");

    auto* dilute_cmd = app.add_subcommand("dilute", "Dilute the test set with one method");
    std::string dilute_method;
    dilute_cmd->add_option("method", dilute_method, "Method id, e.g. xmd or image_kw")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate methods and write reports");
    std::vector<std::string> eval_methods;
    eval->add_option("methods", eval_methods, "Method ids (default: baselines.methods)");

    auto* run = app.add_subcommand("run", "Main table, ablation, lambda sweep and length control");
    auto* ablate = app.add_subcommand("ablate", "Plain / Adv / Full ablation");
    auto* sweep = app.add_subcommand("sweep-lambda", "Stage-2 lambda sweep");
    auto* length = app.add_subcommand("length-control", "Re-evaluate with controlled dilution lengths");
    auto* report = app.add_subcommand("report", "Render tables from the reports already written");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitConfig;
    }

    try {
        if (validate->parsed()) {
            const auto split = xmd::load_dataset(validate_path);
            split.validate();
            std::cout << "ok: " << split.train.size() << " train, " << split.validation.size() << " validation, " << split.test.size()
                      << " test, " << split.num_classes() << " classes\n";
            return 0;
        }

        xmd::ExperimentConfig config =
            config_path.empty() ? xmd::parse_config("", overrides) : xmd::load_config(config_path, overrides);

        if (synth->parsed()) {
            const auto split = xmd::synth_dataset(config.dataset.synth, config.dataset.seed);
            xmd::save_dataset(split, synth_out);
            std::cout << "wrote " << (std::filesystem::path(synth_out) / "dataset.jsonl").string() << '\n';
            return 0;
        }

        xmd::Experiment exp(config, quiet ? nullptr : &std::cerr);
        if (train_cls->parsed()) {
            exp.classifiers();
        } else if (train_gen->parsed()) {
            const auto objective = xmd::parse_adv_objective(config.generator.adv_objective);
            for (auto seed : config.seeds) exp.stage2(seed, config.generator.lambda, objective);
        } else if (dilute_cmd->parsed()) {
            for (auto seed : config.seeds) exp.dilutions(dilute_method, seed);
        } else if (eval->parsed()) {
            const auto& methods = eval_methods.empty() ? config.baselines.methods : eval_methods;
            std::vector<xmd::MetricReport> reports;
            for (const auto& m : methods) reports.push_back(exp.report(m));
            std::cout << xmd::render_markdown(reports);
        } else if (run->parsed()) {
            xmd::run_pipeline(exp);
            std::vector<xmd::AblationMode> modes;
            for (const auto& m : config.ablation_modes) modes.push_back(xmd::parse_ablation_mode(m));
            xmd::run_ablation(exp, modes);
            xmd::sweep_lambda(exp, config.sweep_lambdas);
            xmd::run_length_controlled(exp, config.metrics.length_target);
            std::ifstream main_table(exp.root() / "tables" / "main.md");
            std::cout << main_table.rdbuf();
        } else if (ablate->parsed()) {
            std::vector<xmd::AblationMode> modes;
            for (const auto& m : config.ablation_modes) modes.push_back(xmd::parse_ablation_mode(m));
            std::cout << xmd::render_markdown(xmd::run_ablation(exp, modes));
        } else if (sweep->parsed()) {
            std::cout << xmd::render_sweep_csv(xmd::sweep_lambda(exp, config.sweep_lambdas));
        } else if (length->parsed()) {
            std::cout << xmd::render_length_control_markdown(xmd::run_length_controlled(exp, config.metrics.length_target),
                                                             config.metrics.length_target);
        } else if (report->parsed()) {
            std::vector<xmd::MetricReport> reports;
            for (const auto& m : config.baselines.methods) {
                std::ifstream in(exp.root() / "reports" / (m + ".json"));
                if (!in) throw xmd::StageError("report", "no report for method '" + m + "'; run eval first");
                nlohmann::json j;
                in >> j;
                reports.push_back(xmd::report_from_json(j));
            }
            exp.write_table("main", reports);
            std::cout << xmd::render_markdown(reports);
        }
        return 0;
    } catch (const xmd::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
}
