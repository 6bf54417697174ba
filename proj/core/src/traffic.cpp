#include "gnnflavors/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gnnflavors/ops.hpp"
#include "gnnflavors/optim.hpp"
#include "gnnflavors/rng.hpp"

namespace gnnflavors::traffic {

namespace {
using tg::TensorPtr;
using i64 = std::int64_t;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// days-from-civil (Howard Hinnant's algorithm); avoids timezone-dependent
// libc conversions.
i64 days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const i64 era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<i64>(doe) - 719468;
}

i64 parse_timestamp(const std::string& s, const std::string& path, int lineno) {
    // either epoch seconds or "YYYY-MM-DD HH:MM:SS"
    if (s.find('-') == std::string::npos) {
        try {
            return std::stoll(s);
        } catch (const std::exception&) {
            throw LoadError("values: bad timestamp at " + path + ":" + std::to_string(lineno));
        }
    }
    int y, mo, d, h = 0, mi = 0, sec = 0;
    if (std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &sec) < 3)
        throw LoadError("values: bad timestamp '" + s + "' at " + path + ":" +
                        std::to_string(lineno));
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}
}  // namespace

double TrafficTensor::missing_fraction() const {
    if (observed.empty()) return 0.0;
    std::size_t missing = 0;
    for (auto o : observed) missing += o ? 0 : 1;
    return static_cast<double>(missing) / static_cast<double>(observed.size());
}

void TrafficTensor::validate() const {
    if (n_metrics < 1 || n_nodes < 1 || n_steps < 1)
        throw LoadError("traffic tensor: empty dimensions");
    const auto want = static_cast<std::size_t>(n_metrics * n_nodes * n_steps);
    if (values.size() != want || observed.size() != want)
        throw LoadError("traffic tensor: buffer sizes disagree with dimensions");
    if (static_cast<i64>(timestamps.size()) != n_steps)
        throw LoadError("traffic tensor: timestamp count");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] <= timestamps[i - 1])
            throw LoadError("traffic tensor: timestamps not strictly increasing at row " +
                            std::to_string(i));
        if (timestamps[i] - timestamps[i - 1] != granularity_minutes * 60)
            throw LoadError("traffic tensor: irregular granularity at row " + std::to_string(i));
    }
}

TrafficTensor load_values_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("values: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw LoadError("values: empty file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() < 2) throw LoadError("values: header needs timestamp + node columns");

    TrafficTensor t;
    t.n_metrics = 1;
    t.n_nodes = static_cast<i64>(header.size()) - 1;
    t.node_ids.assign(header.begin() + 1, header.end());

    std::vector<double> rows;  // row-major [l][n], transposed later
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (static_cast<i64>(cells.size()) != t.n_nodes + 1)
            throw LoadError("values: ragged row at " + path + ":" + std::to_string(lineno) +
                            " (got " + std::to_string(cells.size()) + " cells, want " +
                            std::to_string(t.n_nodes + 1) + ")");
        t.timestamps.push_back(parse_timestamp(cells[0], path, lineno));
        for (i64 n = 0; n < t.n_nodes; ++n) {
            try {
                rows.push_back(std::stod(cells[static_cast<std::size_t>(n + 1)]));
            } catch (const std::exception&) {
                throw LoadError("values: bad number at " + path + ":" + std::to_string(lineno) +
                                " column " + std::to_string(n + 2));
            }
        }
    }
    t.n_steps = static_cast<i64>(t.timestamps.size());
    if (t.n_steps < 2) throw LoadError("values: need at least 2 rows in '" + path + "'");
    t.granularity_minutes = (t.timestamps[1] - t.timestamps[0]) / 60;
    if (t.granularity_minutes < 1)
        throw LoadError("values: non-positive granularity in '" + path + "'");

    t.values.resize(static_cast<std::size_t>(t.n_nodes * t.n_steps));
    t.observed.resize(t.values.size());
    for (i64 l = 0; l < t.n_steps; ++l)
        for (i64 n = 0; n < t.n_nodes; ++n) {
            const double v = rows[static_cast<std::size_t>(l * t.n_nodes + n)];
            t.values[t.at(0, n, l)] = v;
            t.observed[t.at(0, n, l)] = v != 0.0 ? 1 : 0;  // zeros are the missing sentinel
        }
    t.validate();
    return t;
}

LoadedDataset load_dataset(const std::string& values_path, const std::string& adjacency_path) {
    LoadedDataset d;
    d.tensor = load_values_csv(values_path);
    int n = 0;
    auto dense = graph::load_adjacency_csv(adjacency_path, n);
    if (n != d.tensor.n_nodes)
        throw LoadError("dataset: adjacency is " + std::to_string(n) + "x" + std::to_string(n) +
                        " but values file has " + std::to_string(d.tensor.n_nodes) + " nodes");
    d.adjacency = graph::AdjacencySet::from_dense(dense, n);

    // road graph from off-diagonal entries; self-loop policy is per layer
    std::vector<graph::Graph::Edge> edges;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && dense[static_cast<std::size_t>(i) * n + j] > 0.0)
                edges.push_back({i, j, dense[static_cast<std::size_t>(i) * n + j]});
    d.road_graph = graph::Graph(n, true, std::move(edges));
    return d;
}

LoadedDataset shrink_dataset(const LoadedDataset& full, std::int64_t max_nodes,
                             std::int64_t max_steps) {
    const i64 keep_n = max_nodes > 0 ? std::min<i64>(max_nodes, full.tensor.n_nodes)
                                     : full.tensor.n_nodes;
    const i64 keep_l = max_steps > 0 ? std::min<i64>(max_steps, full.tensor.n_steps)
                                     : full.tensor.n_steps;
    if (keep_n == full.tensor.n_nodes && keep_l == full.tensor.n_steps) return full;

    LoadedDataset d;
    auto& t = d.tensor;
    t.n_metrics = full.tensor.n_metrics;
    t.n_nodes = keep_n;
    t.n_steps = keep_l;
    t.granularity_minutes = full.tensor.granularity_minutes;
    t.timestamps.assign(full.tensor.timestamps.begin(), full.tensor.timestamps.begin() + keep_l);
    t.node_ids.assign(full.tensor.node_ids.begin(), full.tensor.node_ids.begin() + keep_n);
    t.values.resize(static_cast<std::size_t>(t.n_metrics * keep_n * keep_l));
    t.observed.resize(t.values.size());
    for (i64 m = 0; m < t.n_metrics; ++m)
        for (i64 n = 0; n < keep_n; ++n)
            for (i64 l = 0; l < keep_l; ++l) {
                t.values[t.at(m, n, l)] = full.tensor.values[full.tensor.at(m, n, l)];
                t.observed[t.at(m, n, l)] = full.tensor.observed[full.tensor.at(m, n, l)];
            }

    const int fn = full.adjacency.n;
    std::vector<double> dense(static_cast<std::size_t>(keep_n) * static_cast<std::size_t>(keep_n));
    auto full_dense = full.road_graph.dense_adjacency();
    for (i64 i = 0; i < keep_n; ++i)
        for (i64 j = 0; j < keep_n; ++j)
            dense[static_cast<std::size_t>(i * keep_n + j)] =
                full_dense[static_cast<std::size_t>(i * fn + j)];
    d.adjacency = graph::AdjacencySet::from_dense(dense, static_cast<int>(keep_n));
    std::vector<graph::Graph::Edge> edges;
    for (i64 i = 0; i < keep_n; ++i)
        for (i64 j = 0; j < keep_n; ++j)
            if (i != j && dense[static_cast<std::size_t>(i * keep_n + j)] > 0.0)
                edges.push_back({static_cast<int>(i), static_cast<int>(j),
                                 dense[static_cast<std::size_t>(i * keep_n + j)]});
    d.road_graph = graph::Graph(static_cast<int>(keep_n), true, std::move(edges));
    return d;
}

void WindowSpec::validate() const {
    if (obs_window < 1 || forecast_window < 1) throw ContractError("window: sizes must be >= 1");
    if (horizon_gap < 0) throw ContractError("window: horizon gap must be >= 0");
    if (probes.empty()) throw ContractError("window: no probe steps");
    for (auto p : probes)
        if (p < 1 || p > forecast_window)
            throw ContractError("window: probe " + std::to_string(p) +
                                " outside forecast window");
}

namespace {
Partition make_partition(i64 begin, i64 end, const WindowSpec& w, const char* name) {
    Partition p;
    p.begin = begin;
    p.end = end;
    const i64 lo = begin + w.obs_window;
    const i64 hi = end - w.horizon_gap - w.forecast_window;  // inclusive origin bound
    if (hi < lo)
        throw ContractError(std::string("split: partition '") + name +
                            "' too short for one window");
    for (i64 l = lo; l <= hi; ++l) p.origins.push_back(l);
    return p;
}
}  // namespace

SplitWindows split_and_window(const TrafficTensor& t, const std::array<double, 3>& ratios,
                              const WindowSpec& w) {
    w.validate();
    const double rsum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(rsum - 1.0) > 1e-9) throw ContractError("split: ratios must sum to 1");
    const i64 train_len = static_cast<i64>(std::floor(ratios[0] * static_cast<double>(t.n_steps)));
    const i64 val_len = static_cast<i64>(std::floor(ratios[1] * static_cast<double>(t.n_steps)));
    SplitWindows s;
    s.train = make_partition(0, train_len, w, "train");
    s.val = make_partition(train_len, train_len + val_len, w, "val");
    s.test = make_partition(train_len + val_len, t.n_steps, w, "test");
    return s;
}

Scaler Scaler::fit(const TrafficTensor& t, std::int64_t begin, std::int64_t end) {
    double sum = 0.0, sum2 = 0.0;
    i64 n = 0;
    for (i64 m = 0; m < t.n_metrics; ++m)
        for (i64 node = 0; node < t.n_nodes; ++node)
            for (i64 l = begin; l < end; ++l) {
                if (!t.observed[t.at(m, node, l)]) continue;
                const double v = t.values[t.at(m, node, l)];
                sum += v;
                sum2 += v * v;
                ++n;
            }
    if (n == 0) throw ContractError("scaler: no observed entries in the fitting range");
    Scaler s;
    s.mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - s.mean * s.mean;
    s.std = var > 0.0 ? std::sqrt(var) : 0.0;
    if (s.std < 1e-8) s.std = 1.0;  // degenerate guard
    return s;
}

Batch assemble_batch(const TrafficTensor& t, const std::vector<std::int64_t>& origins,
                     const WindowSpec& w, const Scaler& scaler) {
    const i64 b = static_cast<i64>(origins.size());
    const i64 n = t.n_nodes;
    Batch out;
    out.n_windows = b;
    auto input = tg::Tensor::zeros({b, t.n_metrics, n, w.obs_window});
    auto target = tg::Tensor::zeros({b, 1, n, w.forecast_window});
    out.target_mask.assign(static_cast<std::size_t>(b * n * w.forecast_window), 0);

    for (i64 k = 0; k < b; ++k) {
        const i64 l0 = origins[static_cast<std::size_t>(k)];
        for (i64 m = 0; m < t.n_metrics; ++m)
            for (i64 node = 0; node < n; ++node)
                for (i64 j = 0; j < w.obs_window; ++j)
                    input->data[static_cast<std::size_t>(
                        ((k * t.n_metrics + m) * n + node) * w.obs_window + j)] =
                        scaler.apply(t.values[t.at(m, node, l0 - w.obs_window + j)]);
        for (i64 node = 0; node < n; ++node)
            for (i64 j = 0; j < w.forecast_window; ++j) {
                const i64 l = l0 + w.horizon_gap + j;
                target->data[static_cast<std::size_t>((k * n + node) * w.forecast_window + j)] =
                    t.values[t.at(0, node, l)];
                out.target_mask[static_cast<std::size_t>((k * n + node) * w.forecast_window + j)] =
                    t.observed[t.at(0, node, l)];
            }
    }
    out.input = input;
    out.target_raw = target;
    return out;
}

std::vector<double> copy_last_steps(const TrafficTensor& t, std::int64_t origin,
                                    const WindowSpec& w) {
    if (origin - w.obs_window < 0 || origin > t.n_steps)
        throw ContractError("copy_last_steps: origin out of range");
    std::vector<double> out(static_cast<std::size_t>(t.n_nodes * w.forecast_window));
    for (i64 node = 0; node < t.n_nodes; ++node) {
        const double last = t.values[t.at(0, node, origin - 1)];
        for (i64 j = 0; j < w.forecast_window; ++j)
            out[static_cast<std::size_t>(node * w.forecast_window + j)] = last;
    }
    return out;
}

HistoricalAverage HistoricalAverage::fit(const TrafficTensor& t, std::int64_t begin,
                                         std::int64_t end) {
    if (end <= begin) throw ContractError("historical_average: empty training range");
    HistoricalAverage h;
    h.granularity_sec_ = t.granularity_minutes * 60;
    h.slots_per_week_ = 7 * 24 * 3600 / h.granularity_sec_;
    h.n_nodes_ = t.n_nodes;
    std::vector<double> slot_sum(static_cast<std::size_t>(t.n_nodes * h.slots_per_week_), 0.0);
    std::vector<i64> slot_n(slot_sum.size(), 0);
    std::vector<double> node_sum(static_cast<std::size_t>(t.n_nodes), 0.0);
    std::vector<i64> node_n(static_cast<std::size_t>(t.n_nodes), 0);
    double global_sum = 0.0;
    i64 global_n = 0;

    for (i64 node = 0; node < t.n_nodes; ++node)
        for (i64 l = begin; l < end; ++l) {
            if (!t.observed[t.at(0, node, l)]) continue;
            const double v = t.values[t.at(0, node, l)];
            const i64 slot = (t.timestamps[static_cast<std::size_t>(l)] / h.granularity_sec_) %
                             h.slots_per_week_;
            slot_sum[static_cast<std::size_t>(node * h.slots_per_week_ + slot)] += v;
            ++slot_n[static_cast<std::size_t>(node * h.slots_per_week_ + slot)];
            node_sum[static_cast<std::size_t>(node)] += v;
            ++node_n[static_cast<std::size_t>(node)];
            global_sum += v;
            ++global_n;
        }
    if (global_n == 0) throw ContractError("historical_average: no observed training entries");

    h.global_mean_ = global_sum / static_cast<double>(global_n);
    h.node_mean_.resize(static_cast<std::size_t>(t.n_nodes));
    for (i64 node = 0; node < t.n_nodes; ++node)
        h.node_mean_[static_cast<std::size_t>(node)] =
            node_n[static_cast<std::size_t>(node)] > 0
                ? node_sum[static_cast<std::size_t>(node)] /
                      static_cast<double>(node_n[static_cast<std::size_t>(node)])
                : h.global_mean_;
    h.slot_mean_.assign(slot_sum.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < slot_sum.size(); ++i)
        if (slot_n[i] > 0) h.slot_mean_[i] = slot_sum[i] / static_cast<double>(slot_n[i]);
    return h;
}

double HistoricalAverage::predict(std::int64_t node, std::int64_t timestamp) const {
    if (node < 0 || node >= n_nodes_) throw ContractError("historical_average: node out of range");
    const i64 slot = (timestamp / granularity_sec_) % slots_per_week_;
    const double v = slot_mean_[static_cast<std::size_t>(node * slots_per_week_ + slot)];
    if (!std::isnan(v)) return v;
    return node_mean_[static_cast<std::size_t>(node)];
}

std::vector<HorizonMetrics> traffic_metrics(const std::vector<double>& pred,
                                            const std::vector<double>& target,
                                            const std::vector<std::uint8_t>& mask,
                                            std::int64_t n_windows, std::int64_t n_nodes,
                                            std::int64_t forecast_window,
                                            const std::vector<std::int64_t>& probes) {
    const auto want = static_cast<std::size_t>(n_windows * n_nodes * forecast_window);
    if (pred.size() != want || target.size() != want || mask.size() != want)
        throw ContractError("traffic_metrics: buffer sizes");
    std::vector<HorizonMetrics> out;
    for (auto p : probes) {
        if (p < 1 || p > forecast_window) throw ContractError("traffic_metrics: bad probe");
        HorizonMetrics m;
        m.probe = p;
        double se = 0.0, ae = 0.0, ape = 0.0;
        i64 n = 0, n_ape = 0;
        for (i64 w = 0; w < n_windows; ++w)
            for (i64 node = 0; node < n_nodes; ++node) {
                const auto idx =
                    static_cast<std::size_t>((w * n_nodes + node) * forecast_window + (p - 1));
                if (!mask[idx]) continue;
                const double e = pred[idx] - target[idx];
                se += e * e;
                ae += std::abs(e);
                ++n;
                if (std::abs(target[idx]) >= 1e-6) {
                    ape += std::abs(e / target[idx]);
                    ++n_ape;
                }
            }
        if (n == 0)
            throw ContractError("traffic_metrics: no unmasked targets at probe " +
                                std::to_string(p));
        m.rmse = std::sqrt(se / static_cast<double>(n));
        m.mae = ae / static_cast<double>(n);
        m.mape = n_ape > 0 ? 100.0 * ape / static_cast<double>(n_ape) : 0.0;
        m.count = n;
        out.push_back(m);
    }
    return out;
}

std::vector<HorizonMetrics> evaluate_forecaster(const TrafficTensor& t, const Partition& part,
                                                const WindowSpec& w, const ForecastFn& fn,
                                                const std::vector<std::int64_t>& probes) {
    struct Acc {
        double se = 0.0, ae = 0.0, ape = 0.0;
        i64 n = 0, n_ape = 0;
    };
    std::vector<Acc> accs(probes.size());
    for (i64 origin : part.origins) {
        auto pred = fn(origin);
        if (pred.size() != static_cast<std::size_t>(t.n_nodes * w.forecast_window))
            throw ContractError("evaluate_forecaster: prediction size");
        for (std::size_t pi = 0; pi < probes.size(); ++pi) {
            const i64 p = probes[pi];
            const i64 l = origin + w.horizon_gap + (p - 1);
            for (i64 node = 0; node < t.n_nodes; ++node) {
                if (!t.observed[t.at(0, node, l)]) continue;
                const double target = t.values[t.at(0, node, l)];
                const double e =
                    pred[static_cast<std::size_t>(node * w.forecast_window + (p - 1))] - target;
                accs[pi].se += e * e;
                accs[pi].ae += std::abs(e);
                ++accs[pi].n;
                if (std::abs(target) >= 1e-6) {
                    accs[pi].ape += std::abs(e / target);
                    ++accs[pi].n_ape;
                }
            }
        }
    }
    std::vector<HorizonMetrics> out;
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
        if (accs[pi].n == 0)
            throw ContractError("evaluate_forecaster: no unmasked targets at probe " +
                                std::to_string(probes[pi]));
        HorizonMetrics m;
        m.probe = probes[pi];
        m.rmse = std::sqrt(accs[pi].se / static_cast<double>(accs[pi].n));
        m.mae = accs[pi].ae / static_cast<double>(accs[pi].n);
        m.mape = accs[pi].n_ape > 0 ? 100.0 * accs[pi].ape / static_cast<double>(accs[pi].n_ape)
                                    : 0.0;
        m.count = accs[pi].n;
        out.push_back(m);
    }
    return out;
}

namespace {

// Masked MAE in original units: predictions inverted through the scaler.
TensorPtr masked_mae_loss(const TensorPtr& pred_scaled, const Batch& batch, const Scaler& scaler,
                          bool mask_loss) {
    auto pred = tg::add_scalar(tg::mul_scalar(pred_scaled, scaler.std), scaler.mean);
    auto diff = tg::abs_op(tg::sub(pred, batch.target_raw));
    if (!mask_loss) return tg::mean_all(diff);
    i64 n_obs = 0;
    auto mask = tg::Tensor::zeros(diff->shape);
    for (std::size_t i = 0; i < batch.target_mask.size(); ++i) {
        mask->data[i] = batch.target_mask[i] ? 1.0 : 0.0;
        n_obs += batch.target_mask[i];
    }
    if (n_obs == 0) throw ContractError("loss: batch has no observed targets");
    return tg::mul_scalar(tg::sum_all(tg::mul(diff, mask)), 1.0 / static_cast<double>(n_obs));
}

double masked_mae_value(const std::vector<double>& pred, const Batch& batch) {
    double ae = 0.0;
    i64 n = 0;
    for (std::size_t i = 0; i < batch.target_mask.size(); ++i) {
        if (!batch.target_mask[i]) continue;
        ae += std::abs(pred[i] - batch.target_raw->data[i]);
        ++n;
    }
    return n ? ae / static_cast<double>(n) : 0.0;
}

}  // namespace

TrafficRunResult train_traffic(const LoadedDataset& data, const TrafficTrainConfig& cfg,
                               std::uint64_t seed, std::ostream* log,
                               wavenet::WaveNetModel* model_out) {
    TrafficRunResult result;
    const auto& t = data.tensor;

    auto net_cfg = cfg.net;
    net_cfg.in_channels = static_cast<int>(t.n_metrics);
    net_cfg.obs_window = static_cast<int>(cfg.window.obs_window);
    net_cfg.forecast_window = static_cast<int>(cfg.window.forecast_window);
    net_cfg.validate();
    cfg.window.validate();

    auto splits = split_and_window(t, cfg.ratios, cfg.window);
    auto scaler = Scaler::fit(t, splits.train.begin, splits.train.end);

    Rng rng(mix_seed(seed, 11));
    auto model = wavenet::WaveNetModel::make(net_cfg, data.adjacency, rng);
    auto ctx = wavenet::SpatialContext::build(data.road_graph, model.adjacency, net_cfg);
    result.param_count = model.param_count();
    auto params = model.parameters();
    tg::AdamConfig acfg;
    acfg.lr = cfg.lr;
    tg::Adam opt(params, acfg);

    // deterministic validation subset (evenly strided)
    std::vector<i64> val_origins;
    {
        const i64 total = static_cast<i64>(splits.val.origins.size());
        const i64 want = cfg.val_subset > 0 ? std::min<i64>(cfg.val_subset, total) : total;
        const i64 stride = std::max<i64>(1, total / want);
        for (i64 i = 0; i < total && static_cast<i64>(val_origins.size()) < want; i += stride)
            val_origins.push_back(splits.val.origins[static_cast<std::size_t>(i)]);
    }

    auto eval_mae = [&](const std::vector<i64>& origins) {
        tg::Tape::NoGrad off;
        double ae_sum = 0.0;
        i64 n_sum = 0;
        const i64 chunk = 16;
        for (std::size_t pos = 0; pos < origins.size(); pos += chunk) {
            std::vector<i64> part(origins.begin() + static_cast<std::ptrdiff_t>(pos),
                                  origins.begin() +
                                      static_cast<std::ptrdiff_t>(std::min(origins.size(),
                                                                           pos + chunk)));
            auto batch = assemble_batch(t, part, cfg.window, scaler);
            auto pred_scaled = wavenet::wavenet_forward(model, ctx, batch.input);
            std::vector<double> pred(pred_scaled->data.size());
            for (std::size_t i = 0; i < pred.size(); ++i)
                pred[i] = scaler.invert(pred_scaled->data[i]);
            for (std::size_t i = 0; i < batch.target_mask.size(); ++i) {
                if (!batch.target_mask[i]) continue;
                ae_sum += std::abs(pred[i] - batch.target_raw->data[i]);
                ++n_sum;
            }
        }
        return n_sum ? ae_sum / static_cast<double>(n_sum) : 0.0;
    };

    // training loop with early stopping on validation MAE
    std::vector<std::vector<double>> best_params;
    double best_val = std::numeric_limits<double>::infinity();
    i64 evals_since_best = 0;

    try {
        Rng shuffle_rng(mix_seed(seed, 13));
        std::vector<i64> order = splits.train.origins;
        std::size_t cursor = order.size();  // trigger shuffle on first step
        for (i64 step = 0; step < cfg.max_steps; ++step) {
            std::vector<i64> origins;
            for (i64 b = 0; b < cfg.batch_windows; ++b) {
                if (cursor >= order.size()) {
                    for (std::size_t i = order.size(); i-- > 1;)
                        std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);
                    cursor = 0;
                }
                origins.push_back(order[cursor++]);
            }
            auto batch = assemble_batch(t, origins, cfg.window, scaler);
            tg::Tape::Scope scope;
            auto pred = wavenet::wavenet_forward(model, ctx, batch.input);
            auto loss = masked_mae_loss(pred, batch, scaler, cfg.mask_loss);
            opt.zero_grad();
            scope.tape().backward(loss);
            opt.step();
            result.steps_run = step + 1;

            if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
                const double val_mae = eval_mae(val_origins);
                if (log) {
                    *log << "step " << (step + 1) << " train_loss=" << fmt_double(loss->value())
                         << " val_mae=" << fmt_double(val_mae) << "\n";
                    log->flush();
                }
                if (val_mae < best_val) {
                    best_val = val_mae;
                    evals_since_best = 0;
                    best_params.clear();
                    for (const auto& p : params) best_params.push_back(p->data);
                } else if (++evals_since_best >= cfg.patience) {
                    if (log) *log << "early stop at step " << (step + 1) << "\n";
                    break;
                }
            }
        }
    } catch (const NumericError& e) {
        result.failed = true;
        result.failure = e.what();
        if (log) *log << "run failed: " << e.what() << "\n";
        return result;
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best_params[i];
    result.best_val_mae = best_val;

    // test metrics for the model and the copy-last baseline
    auto model_forecast = [&](i64 origin) {
        tg::Tape::NoGrad off;
        auto batch = assemble_batch(t, {origin}, cfg.window, scaler);
        auto pred_scaled = wavenet::wavenet_forward(model, ctx, batch.input);
        std::vector<double> pred(pred_scaled->data.size());
        for (std::size_t i = 0; i < pred.size(); ++i)
            pred[i] = scaler.invert(pred_scaled->data[i]);
        return pred;
    };
    result.test_metrics =
        evaluate_forecaster(t, splits.test, cfg.window, model_forecast, cfg.window.probes);
    result.copy_last_metrics = evaluate_forecaster(
        t, splits.test, cfg.window,
        [&](i64 origin) { return copy_last_steps(t, origin, cfg.window); }, cfg.window.probes);

    if (model_out) *model_out = model;
    return result;
}

LoadedDataset make_synthetic_dataset(int n_nodes, std::int64_t n_steps,
                                     std::int64_t granularity_minutes, double missing_rate,
                                     std::uint64_t seed) {
    auto g = graph::gen_er_graph(n_nodes, 0.15, mix_seed(seed, 1));
    auto dense = g.dense_adjacency();
    auto p_fwd = graph::normalize_forward(dense, n_nodes);

    LoadedDataset d;
    auto& t = d.tensor;
    t.n_metrics = 1;
    t.n_nodes = n_nodes;
    t.n_steps = n_steps;
    t.granularity_minutes = granularity_minutes;
    t.values.resize(static_cast<std::size_t>(n_nodes) * static_cast<std::size_t>(n_steps));
    t.observed.resize(t.values.size());
    for (int n = 0; n < n_nodes; ++n) t.node_ids.push_back("s" + std::to_string(n));
    const i64 start = days_from_civil(2012, 3, 1) * 86400;
    for (i64 l = 0; l < n_steps; ++l) t.timestamps.push_back(start + l * granularity_minutes * 60);

    Rng rng(mix_seed(seed, 2));
    std::vector<double> base(static_cast<std::size_t>(n_nodes));
    std::vector<double> amp(static_cast<std::size_t>(n_nodes));
    std::vector<double> phase(static_cast<std::size_t>(n_nodes));
    for (int n = 0; n < n_nodes; ++n) {
        base[static_cast<std::size_t>(n)] = rng.uniform(50.0, 65.0);
        amp[static_cast<std::size_t>(n)] = rng.uniform(4.0, 10.0);
        phase[static_cast<std::size_t>(n)] = rng.uniform(0.0, 2.0 * M_PI);
    }
    const double steps_per_day = 24.0 * 60.0 / static_cast<double>(granularity_minutes);

    // graph-coupled AR(1) disturbance: z <- 0.7 z + 0.2 P z + noise
    std::vector<double> z(static_cast<std::size_t>(n_nodes), 0.0), pz(z), znew(z);
    Rng noise_rng(mix_seed(seed, 3));
    for (i64 l = 0; l < n_steps; ++l) {
        for (int i = 0; i < n_nodes; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n_nodes; ++j)
                acc += p_fwd[static_cast<std::size_t>(i) * n_nodes + j] * z[static_cast<std::size_t>(j)];
            pz[static_cast<std::size_t>(i)] = acc;
        }
        for (int i = 0; i < n_nodes; ++i) {
            znew[static_cast<std::size_t>(i)] = 0.7 * z[static_cast<std::size_t>(i)] +
                                                0.2 * pz[static_cast<std::size_t>(i)] +
                                                noise_rng.normal(0.0, 1.0);
            const double daily =
                amp[static_cast<std::size_t>(i)] *
                std::sin(2.0 * M_PI * static_cast<double>(l) / steps_per_day +
                         phase[static_cast<std::size_t>(i)]);
            double v = base[static_cast<std::size_t>(i)] + daily +
                       2.5 * znew[static_cast<std::size_t>(i)];
            v = std::clamp(v, 3.0, 72.0);  // keep clear of the zero sentinel
            t.values[t.at(0, i, l)] = v;
            t.observed[t.at(0, i, l)] = 1;
        }
        z.swap(znew);
    }

    // inject missing entries as zeros
    Rng miss_rng(mix_seed(seed, 4));
    for (auto idx = static_cast<std::size_t>(0); idx < t.values.size(); ++idx)
        if (miss_rng.next_unit() < missing_rate) {
            t.values[idx] = 0.0;
            t.observed[idx] = 0;
        }

    d.adjacency = graph::AdjacencySet::from_dense(dense, n_nodes);
    d.road_graph = std::move(g);
    return d;
}

void write_values_csv(const std::string& path, const TrafficTensor& t) {
    std::ofstream out(path);
    if (!out) throw LoadError("values: cannot open '" + path + "' for writing");
    out << "timestamp";
    for (const auto& id : t.node_ids) out << "," << id;
    out << "\n";
    for (i64 l = 0; l < t.n_steps; ++l) {
        out << t.timestamps[static_cast<std::size_t>(l)];
        for (i64 n = 0; n < t.n_nodes; ++n) out << "," << fmt_double(t.values[t.at(0, n, l)]);
        out << "\n";
    }
}

void write_adjacency_csv(const std::string& path, const std::vector<double>& dense, int n) {
    std::ofstream out(path);
    if (!out) throw LoadError("adjacency: cannot open '" + path + "' for writing");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (j) out << ",";
            out << fmt_double(dense[static_cast<std::size_t>(i) * n + j]);
        }
        out << "\n";
    }
}

void write_horizon_metrics_csv(const std::string& path,
                               const std::vector<std::vector<HorizonMetrics>>& rows,
                               const std::vector<std::string>& row_names) {
    if (rows.size() != row_names.size()) throw ContractError("metrics csv: row names");
    std::ofstream out(path);
    if (!out) throw LoadError("metrics: cannot open '" + path + "' for writing");
    out << "model,probe,rmse,mae,mape,count\n";
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (const auto& m : rows[r])
            out << row_names[r] << "," << m.probe << "," << fmt_double(m.rmse) << ","
                << fmt_double(m.mae) << "," << fmt_double(m.mape) << "," << m.count << "\n";
}

void write_horizon_metrics_json(const std::string& path,
                                const std::vector<std::vector<HorizonMetrics>>& rows,
                                const std::vector<std::string>& row_names) {
    if (rows.size() != row_names.size()) throw ContractError("metrics json: row names");
    nlohmann::json doc = nlohmann::json::object();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& m : rows[r])
            arr.push_back({{"probe", m.probe},
                           {"rmse", m.rmse},
                           {"mae", m.mae},
                           {"mape", m.mape},
                           {"count", m.count}});
        doc[row_names[r]] = std::move(arr);
    }
    std::ofstream out(path);
    if (!out) throw LoadError("metrics: cannot open '" + path + "' for writing");
    out << doc.dump(1) << "\n";
}

}  // namespace gnnflavors::traffic
