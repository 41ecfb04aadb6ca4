#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hsfm/data.hpp"
#include "hsfm/errors.hpp"
#include "hsfm/hsfm.hpp"
#include "hsfm/pipeline.hpp"
#include "hsfm/testkit.hpp"

namespace fs = std::filesystem;
using namespace hsfm;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
    std::string output;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", path, "Config file")->required()->check(CLI::ExistingFile);
        app->add_option("-s,--set", overrides, "Override a config value, e.g. --set model.lambda=0.1");
        app->add_option("-o,--output", output, "Output directory (overrides output.dir)");
    }
    PipelineConfig load() const {
        std::vector<std::string> o = overrides;
        if (!output.empty()) o.push_back("output.dir=" + fs::absolute(output).string());
        return load_config(path, o);
    }
};

int cmd_evaluate(const ConfigArgs& args) {
    const PipelineResult r = run_pipeline(args.load());
    std::cout << r.table.to_text();
    for (const auto& [label, lambda] : r.lambdas) std::cout << "lambda[" << label << "] = " << lambda << '\n';
    return 0;
}

int cmd_fit(const ConfigArgs& args, const std::string& method, bool log_mode) {
    std::cout << fit_on_all(args.load(), method, log_mode) << '\n';
    return 0;
}

int cmd_partition(const ConfigArgs& args, bool log_mode) {
    const PipelineConfig cfg = args.load();
    const std::string dir = fit_on_all(cfg, "hsfm", log_mode);
    const HsfmModel m = load_hsfm(dir);
    std::cout << "J = " << m.partition.J << '\n';
    for (std::size_t j = 0; j < m.region_sizes.size(); ++j)
        std::cout << "region " << j + 1 << ": " << m.region_sizes[j] << " points\n";
    std::cout << (fs::path(dir) / "partition.csv").string() << '\n';
    return 0;
}

int cmd_mesh(const ConfigArgs& args) {
    const PipelineConfig cfg = args.load();
    const PreparedData prep = prepare_data(cfg, false);
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream out(fs::path(cfg.output_dir) / "domain.geojson");
        out << domain_to_geojson(prep.domain, prep.all.origin).dump(1) << '\n';
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "mesh.txt");
        write_mesh_text(out, *prep.mesh);
        if (!out) throw IoError("cannot write mesh.txt");
    }
    std::printf("points %zu (outside mesh %zu)\nvertices %zu\ntriangles %zu\narea %.6g m^2\nskinny %zu\n", prep.all.size(),
                prep.dropped_train, prep.mesh->num_vertices(), prep.mesh->num_triangles(), prep.mesh->area(),
                prep.skinny_triangles);
    return 0;
}

int cmd_predict(const std::string& model_dir, const std::string& data_path, const std::string& config_path,
                const std::vector<std::string>& overrides, const std::string& out_path) {
    CsvSchema schema;
    if (!config_path.empty()) {
        // Only the schema is needed; data.path may be absent from the file.
        std::vector<std::string> o = overrides;
        o.push_back("data.path=" + data_path);
        schema = load_config(config_path, o).schema;
    } else {
        std::vector<std::string> names;
        const fs::path dir(model_dir);
        std::ifstream in(fs::exists(dir / "model.json") ? dir / "model.json" : dir / "fit.json");
        if (!in) throw IoError("cannot read model in '" + model_dir + "'");
        const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        const nlohmann::json& fit = j.contains("global_fit") ? j["global_fit"] : j;
        if (j.is_discarded() || !fit.contains("feature_names")) throw IoError("cannot read feature names from the model");
        for (const auto& n : fit["feature_names"]) {
            const auto s = n.get<std::string>();
            if (s != "(intercept)") names.push_back(s);
        }
        schema = plain_schema(names);
    }
    const Dataset data = load_houses_csv(data_path, schema);
    const std::vector<double> pred = predict_model_dir(model_dir, data);

    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw IoError("cannot write '" + out_path + "'");
    }
    std::ostream& os = out_path.empty() ? std::cout : file;
    os << "id,prediction\n";
    char buf[40];
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", pred[i]);
        os << data.records[i].id << ',' << buf << '\n';
    }
    return 0;
}

int cmd_synth(const std::string& preset, std::size_t n, std::uint64_t seed, const std::string& out_dir) {
    if (preset != "two-region") throw ConfigError("unknown preset '" + preset + "'");
    const SyntheticSpec spec = two_region_step_spec(n, seed);
    const auto [data, truth] = gen_synthetic(spec);
    fs::create_directories(out_dir);
    const CsvSchema schema = plain_schema(data.feature_names);
    write_houses_csv((fs::path(out_dir) / "houses.csv").string(), data, schema);
    {
        std::ofstream out(fs::path(out_dir) / "truth.json");
        out << truth_to_json(spec, truth).dump(1) << '\n';
    }
    std::ofstream cfg(fs::path(out_dir) / "config.ini");
    cfg << "[data]\npath = houses.csv\nfeatures = ";
    for (std::size_t k = 0; k < data.feature_names.size(); ++k) cfg << (k ? "," : "") << data.feature_names[k];
    cfg << "\n\n[output]\ndir = out\n";
    if (!cfg) throw IoError("cannot write config.ini");
    std::cout << "wrote " << data.size() << " records to " << out_dir << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical spatial functional model for house prices"};
    app.require_subcommand(1);

    ConfigArgs eval_args, fit_args, part_args, mesh_args;
    auto* evaluate = app.add_subcommand("evaluate", "Split, fit every configured method, and report test metrics");
    eval_args.attach(evaluate);

    auto* fit = app.add_subcommand("fit", "Fit one method on all records and save the model");
    fit_args.attach(fit);
    std::string method = "hsfm";
    bool fit_log = false;
    fit->add_option("-m,--method", method, "lr, ssr_field_only, ssr or hsfm")
        ->check(CLI::IsMember({"lr", "ssr_field_only", "ssr", "hsfm"}));
    fit->add_flag("--log", fit_log, "Fit log prices");

    auto* partition = app.add_subcommand("partition", "Fit the global model and geo-partition all records");
    part_args.attach(partition);
    bool part_log = false;
    partition->add_flag("--log", part_log, "Partition using the log-price fit");

    auto* mesh = app.add_subcommand("mesh", "Build the domain and mesh and print their statistics");
    mesh_args.attach(mesh);

    auto* predict = app.add_subcommand("predict", "Predict prices for a house CSV with a saved model");
    std::string model_dir, data_path, pred_config, pred_out;
    std::vector<std::string> pred_overrides;
    predict->add_option("-m,--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
    predict->add_option("-d,--data", data_path, "House CSV")->required()->check(CLI::ExistingFile);
    predict->add_option("-c,--config", pred_config, "Config whose [data] section describes the CSV")
        ->check(CLI::ExistingFile);
    predict->add_option("-s,--set", pred_overrides, "Override a config value");
    predict->add_option("-o,--output", pred_out, "Output CSV (default stdout)");

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with ground truth and a config");
    std::string preset = "two-region", synth_out = "synth";
    std::size_t n = 2000;
    std::uint64_t seed = 20150101;
    synth->add_option("--preset", preset, "Synthetic design")->capture_default_str();
    synth->add_option("-n,--n", n, "Number of records")->capture_default_str();
    synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
    synth->add_option("-o,--output", synth_out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*evaluate) return cmd_evaluate(eval_args);
        if (*fit) return cmd_fit(fit_args, method, fit_log);
        if (*partition) return cmd_partition(part_args, part_log);
        if (*mesh) return cmd_mesh(mesh_args);
        if (*predict) return cmd_predict(model_dir, data_path, pred_config, pred_overrides, pred_out);
        if (*synth) return cmd_synth(preset, n, seed, synth_out);
    } catch (const Error& e) {
        std::cerr << "hsfm: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "hsfm: io error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::data);
    } catch (const std::bad_alloc&) {
        std::cerr << "hsfm: out of memory\n";
        return static_cast<int>(ExitCode::numeric);
    }
    return 0;
}
