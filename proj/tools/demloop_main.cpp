// demloop: DEM-based LiDAR loop detection and closure, desk-scale harness.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "demloop/pipeline.hpp"
#include "demloop/util.hpp"

namespace fs = std::filesystem;
using namespace demloop;

int main(int argc, char** argv) {
    CLI::App app{"DEM-based LiDAR loop detection and 6-DOF loop closure"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "config file (key=value with [sections])");
    app.add_option("--seed", seed_override, "override run.seed")
        ->each([&](const std::string&) { seed_set = true; });

    std::string dataset_dir = "dataset";
    std::string packets_path;
    std::string candidates_csv;
    std::string closures_csv;
    bool refine = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", dataset_dir, "output dataset directory")->required();

    auto* index = app.add_subcommand("index", "canonicalize, rasterize, encode all scans");
    index->add_option("--dataset", dataset_dir)->required();
    index->add_option("--packets", packets_path, "output packets file");

    auto* query = app.add_subcommand("query", "rank loop candidates for every scan");
    query->add_option("--dataset", dataset_dir)->required();
    query->add_option("--packets", packets_path);
    query->add_option("--candidates", candidates_csv, "output candidates CSV");

    auto* close_cmd = app.add_subcommand("close", "estimate 6-DOF poses for top candidates");
    close_cmd->add_option("--dataset", dataset_dir)->required();
    close_cmd->add_option("--packets", packets_path);
    close_cmd->add_option("--candidates", candidates_csv);
    close_cmd->add_option("--closures", closures_csv, "output closures CSV");
    close_cmd->add_flag("--refine-icp", refine, "refine poses with point-to-plane ICP");

    auto* eval = app.add_subcommand("eval", "PR/AP, closure errors, compression report");
    eval->add_option("--dataset", dataset_dir)->required();
    eval->add_option("--packets", packets_path);
    eval->add_option("--candidates", candidates_csv);
    eval->add_option("--closures", closures_csv);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        else if (!synth->parsed() && fs::exists(fs::path(dataset_dir) / "config.cfg"))
            cfg = load_config((fs::path(dataset_dir) / "config.cfg").string());
        if (seed_set) cfg.seed = seed_override;

        if (packets_path.empty()) packets_path = (fs::path(dataset_dir) / "packets.bin").string();
        if (candidates_csv.empty())
            candidates_csv = (fs::path(dataset_dir) / "candidates.csv").string();
        if (closures_csv.empty())
            closures_csv = (fs::path(dataset_dir) / "closures.csv").string();

        if (synth->parsed()) {
            const SynthSummary s = synth_dataset(cfg, dataset_dir);
            std::cout << "synth: " << s.n_scans << " scans, " << s.n_loop_pairs
                      << " gt loop pairs -> " << dataset_dir << '\n';
        } else if (index->parsed()) {
            const IndexSummary s = run_index(cfg, dataset_dir, packets_path);
            std::cout << "index: " << s.stats.items << " packets, mean compression "
                      << s.mean_compression_ratio << "x (min " << s.min_compression_ratio
                      << "x), " << s.stats.per_item_ms << " ms/scan -> " << packets_path
                      << '\n';
        } else if (query->parsed()) {
            const QuerySummary s = run_query(cfg, packets_path, candidates_csv);
            std::cout << "query: " << s.n_queries << " queries, " << s.stats.per_item_ms
                      << " ms/query -> " << candidates_csv << '\n';
        } else if (close_cmd->parsed()) {
            const CloseSummary s = run_close(cfg, dataset_dir, packets_path, candidates_csv,
                                             closures_csv, refine);
            std::cout << "close: " << s.n_closed << " closures, " << s.n_failed
                      << " failed -> " << closures_csv << '\n';
            if (s.n_failed > 0) return 1;
        } else if (eval->parsed()) {
            const std::string report = (fs::path(dataset_dir) / "report.json").string();
            const std::string pr_csv = (fs::path(dataset_dir) / "pr.csv").string();
            const std::string pr_svg = (fs::path(dataset_dir) / "pr.svg").string();
            const EvalReport r = run_eval(cfg, dataset_dir, candidates_csv, closures_csv,
                                          packets_path, report, pr_csv, pr_svg);
            std::cout << "eval: AP " << r.ap << " over " << r.n_queries << " queries ("
                      << r.n_loop_pairs << " gt loop pairs)";
            if (r.n_closures_evaluated > 0)
                std::cout << "; median TE " << r.median_te << " m, RE " << r.median_re
                          << " deg over " << r.n_closures_evaluated << " closures";
            std::cout << " -> " << report << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
