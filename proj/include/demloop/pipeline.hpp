#ifndef DEMLOOP_PIPELINE_HPP
#define DEMLOOP_PIPELINE_HPP

#include <map>
#include <string>
#include <vector>

#include "demloop/config.hpp"
#include "demloop/detect.hpp"

namespace demloop {

struct PacketRecord {
    std::int64_t id = 0;
    std::vector<std::uint8_t> bytes;
};

void write_packets(const std::string& path, const std::vector<PacketRecord>& packets);
std::vector<PacketRecord> read_packets(const std::string& path);

/// Trajectory poses for the synthetic benchmark (sensor -> world).
std::vector<RigidTransform> synth_trajectory(const RunConfig& cfg, const Scene& scene);

struct SynthSummary {
    int n_scans = 0;
    std::size_t n_loop_pairs = 0; // pairs outside the exclusion window within tp_radius
};

/// Emit scans/NNNNNN.bin, poses.txt, config.cfg and manifest.txt.
SynthSummary synth_dataset(const RunConfig& cfg, const std::string& out_dir);

struct StageStats {
    double elapsed_ms = 0.0;
    double per_item_ms = 0.0;
    int items = 0;
};

struct IndexSummary {
    StageStats stats;
    double mean_compression_ratio = 0.0;
    double min_compression_ratio = 0.0;
    std::size_t total_packet_bytes = 0;
    std::size_t total_raw_bytes = 0;
};

IndexSummary run_index(const RunConfig& cfg, const std::string& dataset_dir,
                       const std::string& packets_path);

struct QuerySummary {
    StageStats stats;
    int n_queries = 0;
};

/// Rank candidates per scan: latent-level retrieval, then DEM-level
/// verification of the shortlist. Verified loops get distance 1 - correlation
/// peak; unverified candidates keep their retrieval distance shifted past 2.
QuerySummary run_query(const RunConfig& cfg, const std::string& packets_path,
                       const std::string& candidates_csv);

struct CloseSummary {
    StageStats stats;
    int n_closed = 0;
    int n_failed = 0;
};

CloseSummary run_close(const RunConfig& cfg, const std::string& dataset_dir,
                       const std::string& packets_path, const std::string& candidates_csv,
                       const std::string& closures_csv, bool refine_icp_flag);

struct EvalReport {
    double ap = 0.0;
    int n_queries = 0;
    std::size_t n_loop_pairs = 0;
    double mean_te = 0.0, median_te = 0.0;
    double mean_re = 0.0, median_re = 0.0;
    int n_closures_evaluated = 0;
    double mean_compression_ratio = 0.0;
    double min_compression_ratio = 0.0;
};

/// Recompute PR/AP from the candidates CSV, aggregate closure errors over
/// true-loop pairs, and emit report JSON plus PR CSV/SVG.
EvalReport run_eval(const RunConfig& cfg, const std::string& dataset_dir,
                    const std::string& candidates_csv, const std::string& closures_csv,
                    const std::string& packets_path, const std::string& report_json,
                    const std::string& pr_csv, const std::string& pr_svg);

// CSV round-trip helpers (schemas documented in README).
void write_candidates_csv(const std::string& path,
                          const std::vector<std::vector<LoopCandidate>>& per_query);
std::vector<std::vector<LoopCandidate>> read_candidates_csv(const std::string& path);

struct ClosureRow {
    std::int64_t query_id = 0;
    std::int64_t db_id = 0;
    RigidTransform pose;
    double te = -1.0; // negative when gt is unavailable
    double re = -1.0;
};

void write_closures_csv(const std::string& path, const std::vector<ClosureRow>& rows);
std::vector<ClosureRow> read_closures_csv(const std::string& path);

void write_pr_csv(const std::string& path, const PrCurve& curve);
void write_pr_svg(const std::string& path, const PrCurve& curve);

/// Ground-truth loop pairs: |i-j| >= exclusion_window and poses within radius.
std::size_t count_loop_pairs(const std::vector<RigidTransform>& poses,
                             std::int64_t exclusion_window, double radius);

} // namespace demloop

#endif
