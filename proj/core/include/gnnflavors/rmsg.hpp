#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gnnflavors/graph.hpp"
#include "gnnflavors/layers.hpp"
#include "gnnflavors/mlp.hpp"

// Synthetic node-regression benchmark: each node's label is the root mean
// square of the products of its feature with each neighbor's feature. A fresh
// graph is generated for every datapoint; sample k of a stream depends only
// on (seed, k).

namespace gnnflavors::rmsg {

struct RmsgSample {
    graph::Graph graph;
    std::vector<double> x;
    std::vector<double> y;
};

// y_i = sqrt( (1/deg_i) * sum_{j in N_i} (x_i * x_j)^2 ), y_i = 0 for
// isolated nodes.
std::vector<double> rmsg_labels(const graph::Graph& g, const std::vector<double>& x);

struct DatasetSpec {
    int n_nodes = 100;
    double edge_prob = 0.1;
    std::uint64_t seed = 0;
};

RmsgSample make_rmsg_sample(const DatasetSpec& spec, std::int64_t index);

struct Metrics {
    double rmse = 0.0;
    double mae = 0.0;
    double r2 = 0.0;
    std::int64_t count = 0;
};

// Pooled metrics; lengths must match and be >= 2, y must not be constant.
Metrics eval_metrics(const std::vector<double>& y, const std::vector<double>& h);

// Streaming form of eval_metrics for multi-graph test streams.
class MetricsAccumulator {
public:
    void add(const std::vector<double>& y, const std::vector<double>& h);
    void merge(const MetricsAccumulator& other);
    Metrics finalize() const;

private:
    std::int64_t n_ = 0;
    double sum_sq_err_ = 0.0;
    double sum_abs_err_ = 0.0;
    double sum_y_ = 0.0;
    double sum_y2_ = 0.0;
};

// Constant predictor fitted as the global mean label of a training stream.
double average_model_fit(const DatasetSpec& train, std::int64_t n_samples);
Metrics average_model_eval(double prediction, const DatasetSpec& test, std::int64_t n_samples,
                           int n_threads);

enum class RmsgFlavor { gcn, gat, mpnn, average };
RmsgFlavor rmsg_flavor_from_string(const std::string& s);
std::string to_string(RmsgFlavor f);

struct RmsgConfig {
    RmsgFlavor flavor = RmsgFlavor::mpnn;
    int n_nodes = 100;
    double edge_prob = 0.1;

    std::int64_t hidden = 16;      // encoder/decoder hidden width and GNN feature width
    std::int64_t mpnn_width = 24;  // MLP_1 / MLP_2 internal width
    int gat_heads = 8;
    std::int64_t gat_reduce_hidden = 0;  // 0: M*d
    // The measured convolutional-flavor behavior on this task (mode collapse,
    // size-independent) corresponds to an aggregate without a center-node
    // path: one layer over a normalization without self-loops. Both knobs stay
    // configurable for sensitivity runs.
    int gcn_layers = 1;
    bool gcn_self_loops = false;

    double lr = 2e-3;
    std::int64_t train_samples = 1 << 16;
    std::int64_t val_samples = 1 << 13;
    std::int64_t test_samples = 1 << 16;
    int batch_graphs = 1;
    std::int64_t eval_interval = 8192;  // steps between validation passes (0: off)
    int eval_threads = 2;
};

struct RmsgModel {
    RmsgFlavor flavor = RmsgFlavor::mpnn;
    bool gcn_self_loops = false;
    tg::Mlp encoder;  // 1 -> hidden -> d
    std::vector<nn::GcnParams> gcn_stack;  // relu between applications
    nn::GatParams gat;
    nn::MpnnParams mpnn;
    tg::Mlp decoder;  // d -> hidden -> 1

    static RmsgModel make(const RmsgConfig& cfg, Rng& rng);
    std::vector<tg::TensorPtr> parameters() const;
    std::int64_t param_count() const;
};

//

// predictions for one sample, shape [N]
tg::TensorPtr rmsg_model_forward(const RmsgModel& model, const graph::Graph& g,
                                 const std::vector<double>& x);

struct RunResult {
    bool failed = false;
    std::string failure;
    Metrics validation;
    Metrics test;
    std::int64_t param_count = 0;
    std::int64_t steps = 0;
    std::uint64_t seed = 0;
};

// Minibatch Adam training on RMSE loss over a fresh sample stream; evaluation
// on disjoint validation/test streams derived from the same seed.
RunResult train_rmsg(const RmsgConfig& cfg, std::uint64_t seed, std::ostream* log,
                     RmsgModel* trained_out = nullptr);

// Aggregates the paper protocol: one run per seed, mean and standard
// deviation over exactly those runs.
struct RmsgRunReport {
    std::vector<RunResult> runs;
    Metrics mean() const;
    Metrics stddev() const;
};

struct ResidualReport {
    std::vector<double> residuals;  // y - h over the evaluated stream
    std::vector<double> hist_edges;  // hist_bins + 1 edges
    std::vector<std::int64_t> hist_counts;
    std::vector<double> label_bin_centers;
    std::vector<double> label_bin_mean_residual;
    std::vector<std::int64_t> label_bin_counts;
};

ResidualReport residual_analysis(const std::vector<double>& y, const std::vector<double>& h,
                                 int hist_bins, int label_bins);

// Runs the model over a test stream and collects labels/predictions.
void collect_predictions(const RmsgModel& model, const DatasetSpec& spec,
                         std::int64_t n_samples, std::vector<double>& y_out,
                         std::vector<double>& h_out, int n_threads);

struct SweepRow {
    std::int64_t hidden = 0;
    std::int64_t mpnn_width = 0;
    std::int64_t param_count = 0;
    std::vector<RunResult> runs;
    double mean_r2() const;
    double best_r2() const;
};

// One train_rmsg per (size, seed); sizes index the hidden-width grid.
std::vector<SweepRow> size_sweep(const RmsgConfig& base, const std::vector<std::int64_t>& hidden_grid,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* log);

// report emission
void write_report_csv(const std::string& path, const RmsgRunReport& report);
void write_report_json(const std::string& path, const RmsgRunReport& report,
                       const std::string& flavor_name);
void write_residuals_csv(const std::string& path, const ResidualReport& report);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace gnnflavors::rmsg
