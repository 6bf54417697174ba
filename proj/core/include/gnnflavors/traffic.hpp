#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gnnflavors/adjacency.hpp"
#include "gnnflavors/graph.hpp"
#include "gnnflavors/wavenet.hpp"

// Real-data pipeline for METR-LA-shaped datasets: CSV ingestion, chronological
// splits, windowing, standard scaling, training-free baselines, masked
// per-horizon metrics, and the WaveNet training loop.

namespace gnnflavors::traffic {

// chi in R^{D x N x L} with a missing-value mask. Zero raw values are the
// missing-value sentinel; masking decisions are always made on raw values.
struct TrafficTensor {
    std::int64_t n_metrics = 1;  // D
    std::int64_t n_nodes = 0;    // N
    std::int64_t n_steps = 0;    // L
    std::vector<double> values;         // [d][n][l] row-major
    std::vector<std::uint8_t> observed; // 1 = observed, 0 = missing
    std::vector<std::int64_t> timestamps;  // epoch seconds, one per step
    std::int64_t granularity_minutes = 5;
    std::vector<std::string> node_ids;

    std::size_t at(std::int64_t d, std::int64_t n, std::int64_t l) const {
        return static_cast<std::size_t>((d * n_nodes + n) * n_steps + l);
    }
    double missing_fraction() const;
    void validate() const;
};

// Values CSV: header = timestamp column + one column per node id; rows are
// "<timestamp>,v1,v2,...". Timestamps are ISO "YYYY-MM-DD HH:MM:SS" or raw
// epoch seconds, strictly increasing with constant granularity.
TrafficTensor load_values_csv(const std::string& path);

struct LoadedDataset {
    TrafficTensor tensor;
    graph::AdjacencySet adjacency;
    graph::Graph road_graph;  // off-diagonal nonzero entries of the dense adjacency
};

LoadedDataset load_dataset(const std::string& values_path, const std::string& adjacency_path);

// Optional desk-scale reduction: keep the first max_nodes nodes and/or the
// first max_steps timesteps (0 = keep all).
LoadedDataset shrink_dataset(const LoadedDataset& full, std::int64_t max_nodes,
                             std::int64_t max_steps);

struct WindowSpec {
    std::int64_t obs_window = 12;      // L_OW
    std::int64_t horizon_gap = 0;      // L_FH
    std::int64_t forecast_window = 12; // L_FW
    std::vector<std::int64_t> probes = {3, 6, 12};  // reported steps (1-based)
    void validate() const;
};

// Contiguous chronological split; a window sample is identified by its
// forecast origin l: observations are [l - L_OW, l), targets
// [l + L_FH, l + L_FH + L_FW).
struct Partition {
    std::int64_t begin = 0;  // first timestep of the partition
    std::int64_t end = 0;    // one past the last timestep
    std::vector<std::int64_t> origins;
};

struct SplitWindows {
    Partition train, val, test;
};

SplitWindows split_and_window(const TrafficTensor& t, const std::array<double, 3>& ratios,
                              const WindowSpec& w);

struct Scaler {
    double mean = 0.0;
    double std = 1.0;

    // Fit on the training partition only, ignoring masked entries.
    static Scaler fit(const TrafficTensor& t, std::int64_t begin, std::int64_t end);
    double apply(double x) const { return (x - mean) / std; }
    double invert(double z) const { return z * std + mean; }
};

// Window assembly. Returns [B, D, N, L_OW] scaled observations plus raw
// targets/mask [B, 1, N, L_FW] for metric-space losses (speed metric 0).
struct Batch {
    tg::TensorPtr input;
    tg::TensorPtr target_raw;  // constants, metric 0 only
    std::vector<std::uint8_t> target_mask;
    std::int64_t n_windows = 0;
};

Batch assemble_batch(const TrafficTensor& t, const std::vector<std::int64_t>& origins,
                     const WindowSpec& w, const Scaler& scaler);

// ---- training-free baselines ----

// Every forecast step equals the last observed raw value per node.
// observation block: [N, L_OW] slice at origin l.
std::vector<double> copy_last_steps(const TrafficTensor& t, std::int64_t origin,
                                    const WindowSpec& w);

// Predicts the training-partition mean for the matching time-of-week slot,
// ignoring masked entries; empty slots fall back to the node mean, then the
// global mean.
class HistoricalAverage {
public:
    static HistoricalAverage fit(const TrafficTensor& t, std::int64_t begin, std::int64_t end);
    double predict(std::int64_t node, std::int64_t timestamp) const;

private:
    std::int64_t slots_per_week_ = 0;
    std::int64_t granularity_sec_ = 0;
    std::int64_t n_nodes_ = 0;
    std::vector<double> slot_mean_;  // [node][slot], NaN when empty
    std::vector<double> node_mean_;
    double global_mean_ = 0.0;
};

// ---- metrics ----

struct HorizonMetrics {
    std::int64_t probe = 0;  // 1-based step within the forecast window
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;  // percent
    std::int64_t count = 0;
};

// pred/target: [B, N, L_FW] flattened (metric 0); masked (zero) targets are
// excluded everywhere, and MAPE additionally excludes |target| < 1e-6.
std::vector<HorizonMetrics> traffic_metrics(const std::vector<double>& pred,
                                            const std::vector<double>& target,
                                            const std::vector<std::uint8_t>& mask,
                                            std::int64_t n_windows, std::int64_t n_nodes,
                                            std::int64_t forecast_window,
                                            const std::vector<std::int64_t>& probes);

// Evaluates a forecaster function over a partition's windows.
using ForecastFn =
    std::function<std::vector<double>(std::int64_t origin)>;  // returns [N * L_FW] raw

std::vector<HorizonMetrics> evaluate_forecaster(const TrafficTensor& t, const Partition& part,
                                                const WindowSpec& w, const ForecastFn& fn,
                                                const std::vector<std::int64_t>& probes);

// ---- WaveNet training ----

struct TrafficTrainConfig {
    wavenet::WaveNetConfig net;
    WindowSpec window;
    std::array<double, 3> ratios = {0.7, 0.1, 0.2};
    double lr = 1e-3;
    std::int64_t batch_windows = 8;
    std::int64_t max_steps = 2000;
    std::int64_t eval_every = 200;       // steps between validation passes
    std::int64_t patience = 10;          // early-stopping patience, in evaluations
    std::int64_t val_subset = 256;       // windows used per validation pass (0 = all)
    bool mask_loss = true;               // mask zeros out of the training loss
};

struct TrafficRunResult {
    bool failed = false;
    std::string failure;
    std::vector<HorizonMetrics> test_metrics;
    std::vector<HorizonMetrics> copy_last_metrics;
    double best_val_mae = 0.0;
    std::int64_t steps_run = 0;
    std::int64_t param_count = 0;
};

TrafficRunResult train_traffic(const LoadedDataset& data, const TrafficTrainConfig& cfg,
                               std::uint64_t seed, std::ostream* log,
                               wavenet::WaveNetModel* model_out = nullptr);

// ---- synthetic fixture generator ----

// Desk-scale synthetic dataset with daily structure and graph-coupled noise;
// a few percent of entries are zeroed as missing. Deterministic per seed.
LoadedDataset make_synthetic_dataset(int n_nodes, std::int64_t n_steps,
                                     std::int64_t granularity_minutes, double missing_rate,
                                     std::uint64_t seed);

void write_values_csv(const std::string& path, const TrafficTensor& t);
void write_adjacency_csv(const std::string& path, const std::vector<double>& dense, int n);

void write_horizon_metrics_csv(const std::string& path,
                               const std::vector<std::vector<HorizonMetrics>>& rows,
                               const std::vector<std::string>& row_names);
void write_horizon_metrics_json(const std::string& path,
                                const std::vector<std::vector<HorizonMetrics>>& rows,
                                const std::vector<std::string>& row_names);

}  // namespace gnnflavors::traffic
