#include "gnnflavors/rmsg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "gnnflavors/adjacency.hpp"
#include "gnnflavors/ops.hpp"
#include "gnnflavors/optim.hpp"

namespace gnnflavors::rmsg {

namespace {
using tg::TensorPtr;
using i64 = std::int64_t;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

std::vector<double> rmsg_labels(const graph::Graph& g, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != g.n_nodes())
        throw ShapeError("rmsg_labels: feature count vs node count");
    std::vector<double> y(x.size(), 0.0);
    for (int i = 0; i < g.n_nodes(); ++i) {
        const auto& nbrs = g.neighbors(i);
        if (nbrs.empty()) continue;  // isolated nodes keep label 0
        double acc = 0.0;
        for (auto [j, w] : nbrs) {
            const double prod = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
            acc += prod * prod;
        }
        y[static_cast<std::size_t>(i)] = std::sqrt(acc / static_cast<double>(nbrs.size()));
    }
    return y;
}

RmsgSample make_rmsg_sample(const DatasetSpec& spec, std::int64_t index) {
    const auto sample_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(index));
    RmsgSample s;
    s.graph = graph::gen_er_graph(spec.n_nodes, spec.edge_prob, mix_seed(sample_seed, 1));
    Rng rng(mix_seed(sample_seed, 2));
    s.x.resize(static_cast<std::size_t>(spec.n_nodes));
    for (auto& v : s.x) v = rng.uniform(-2.0, 2.0);
    s.y = rmsg_labels(s.graph, s.x);
    return s;
}

Metrics eval_metrics(const std::vector<double>& y, const std::vector<double>& h) {
    MetricsAccumulator acc;
    acc.add(y, h);
    return acc.finalize();
}

void MetricsAccumulator::add(const std::vector<double>& y, const std::vector<double>& h) {
    if (y.size() != h.size()) throw ContractError("metrics: length mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - h[i];
        sum_sq_err_ += e * e;
        sum_abs_err_ += std::abs(e);
        sum_y_ += y[i];
        sum_y2_ += y[i] * y[i];
    }
    n_ += static_cast<i64>(y.size());
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
    n_ += other.n_;
    sum_sq_err_ += other.sum_sq_err_;
    sum_abs_err_ += other.sum_abs_err_;
    sum_y_ += other.sum_y_;
    sum_y2_ += other.sum_y2_;
}

Metrics MetricsAccumulator::finalize() const {
    if (n_ < 2) throw ContractError("metrics: need at least 2 points");
    const double n = static_cast<double>(n_);
    const double mean_y = sum_y_ / n;
    const double sst = sum_y2_ - n * mean_y * mean_y;
    if (!(sst > 0.0)) throw DomainError("metrics: zero variance in labels");
    Metrics m;
    m.count = n_;
    m.rmse = std::sqrt(sum_sq_err_ / n);
    m.mae = sum_abs_err_ / n;
    m.r2 = 1.0 - sum_sq_err_ / sst;
    return m;
}

RmsgFlavor rmsg_flavor_from_string(const std::string& s) {
    if (s == "gcn") return RmsgFlavor::gcn;
    if (s == "gat") return RmsgFlavor::gat;
    if (s == "mpnn") return RmsgFlavor::mpnn;
    if (s == "average") return RmsgFlavor::average;
    throw ContractError("unknown flavor '" + s + "'");
}

std::string to_string(RmsgFlavor f) {
    switch (f) {
        case RmsgFlavor::gcn: return "gcn";
        case RmsgFlavor::gat: return "gat";
        case RmsgFlavor::mpnn: return "mpnn";
        case RmsgFlavor::average: return "average";
    }
    return "?";
}

RmsgModel RmsgModel::make(const RmsgConfig& cfg, Rng& rng) {
    RmsgModel m;
    m.flavor = cfg.flavor;
    m.gcn_self_loops = cfg.gcn_self_loops;
    const i64 d = cfg.hidden;
    m.encoder = tg::Mlp::make({1, d, d}, tg::Activation::relu, rng, "encoder");
    switch (cfg.flavor) {
        case RmsgFlavor::gcn:
            if (cfg.gcn_layers < 1) throw ContractError("rmsg: gcn_layers must be >= 1");
            for (int l = 0; l < cfg.gcn_layers; ++l)
                m.gcn_stack.push_back(
                    nn::GcnParams::make(d, d, rng, "gcn" + std::to_string(l)));
            break;
        case RmsgFlavor::gat:
            m.gat = nn::GatParams::make(d, cfg.gat_heads, cfg.gat_reduce_hidden, rng, "gat");
            break;
        case RmsgFlavor::mpnn:
            m.mpnn = nn::MpnnParams::make(d, d, cfg.mpnn_width, 1, rng, "mpnn");
            break;
        case RmsgFlavor::average:
            throw ContractError("RmsgModel: the average baseline has no parameters");
    }
    m.decoder = tg::Mlp::make({d, d, 1}, tg::Activation::relu, rng, "decoder");
    return m;
}

std::vector<TensorPtr> RmsgModel::parameters() const {
    std::vector<TensorPtr> out;
    encoder.collect_params(out);
    switch (flavor) {
        case RmsgFlavor::gcn:
            for (const auto& l : gcn_stack) l.collect_params(out);
            break;
        case RmsgFlavor::gat: gat.collect_params(out); break;
        case RmsgFlavor::mpnn: mpnn.collect_params(out); break;
        case RmsgFlavor::average: break;
    }
    decoder.collect_params(out);
    return out;
}

std::int64_t RmsgModel::param_count() const {
    i64 n = 0;
    for (const auto& p : parameters()) n += p->numel();
    return n;
}

TensorPtr rmsg_model_forward(const RmsgModel& model, const graph::Graph& g,
                             const std::vector<double>& x) {
    const i64 n = g.n_nodes();
    auto xt = tg::Tensor::from_values({n, 1}, x);
    auto h = tg::mlp_apply(model.encoder, xt);
    switch (model.flavor) {
        case RmsgFlavor::gcn: {
            auto a_hat = tg::Tensor::from_values(
                {n, n}, graph::gcn_normalize(g.dense_adjacency(), static_cast<int>(n),
                                             model.gcn_self_loops));
            for (std::size_t l = 0; l < model.gcn_stack.size(); ++l) {
                h = nn::gcn_forward(h, a_hat, model.gcn_stack[l]);
                if (l + 1 < model.gcn_stack.size()) h = tg::relu(h);
            }
            break;
        }
        case RmsgFlavor::gat: {
            auto edges = nn::EdgeList::from_graph(g, true);
            h = nn::gat_forward(h, edges, model.gat);
            break;
        }
        case RmsgFlavor::mpnn: {
            auto edges = nn::EdgeList::from_graph(g, false);
            auto adj = graph::AdjacencySet::from_graph(g);
            auto scalars = nn::edge_scalar_features(edges, adj, true);
            h = nn::mpnn_forward(h, edges, scalars, nullptr, model.mpnn);
            break;
        }
        case RmsgFlavor::average:
            throw ContractError("rmsg_model_forward: average baseline");
    }
    return tg::reshape(tg::mlp_apply(model.decoder, h), {n});
}

namespace {

// Deterministic multi-threaded map over a sample range: workers take fixed
// interleaved chunks, results land in per-sample slots.
void for_each_sample(const DatasetSpec& spec, i64 n_samples, int n_threads,
                     const std::function<void(i64, const RmsgSample&)>& fn) {
    const int workers = std::max(1, n_threads);
    if (workers == 1) {
        for (i64 k = 0; k < n_samples; ++k) fn(k, make_rmsg_sample(spec, k));
        return;
    }
    const i64 chunk = 256;
    const i64 n_chunks = (n_samples + chunk - 1) / chunk;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (i64 c = w; c < n_chunks; c += workers) {
                const i64 lo = c * chunk;
                const i64 hi = std::min(n_samples, lo + chunk);
                for (i64 k = lo; k < hi; ++k) fn(k, make_rmsg_sample(spec, k));
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace

double average_model_fit(const DatasetSpec& train, std::int64_t n_samples) {
    if (n_samples < 1) throw ContractError("average_model_fit: empty training stream");
    double sum = 0.0;
    i64 count = 0;
    for (i64 k = 0; k < n_samples; ++k) {
        auto s = make_rmsg_sample(train, k);
        for (double v : s.y) sum += v;
        count += static_cast<i64>(s.y.size());
    }
    return sum / static_cast<double>(count);
}

Metrics average_model_eval(double prediction, const DatasetSpec& test, std::int64_t n_samples,
                           int n_threads) {
    const int workers = std::max(1, n_threads);
    std::vector<MetricsAccumulator> accs(static_cast<std::size_t>(workers > 1 ? (n_samples + 255) / 256 : 1));
    if (workers == 1) {
        for (i64 k = 0; k < n_samples; ++k) {
            auto s = make_rmsg_sample(test, k);
            std::vector<double> h(s.y.size(), prediction);
            accs[0].add(s.y, h);
        }
        return accs[0].finalize();
    }
    for_each_sample(test, n_samples, workers, [&](i64 k, const RmsgSample& s) {
        std::vector<double> h(s.y.size(), prediction);
        accs[static_cast<std::size_t>(k / 256)].add(s.y, h);
    });
    MetricsAccumulator total;
    for (const auto& a : accs) total.merge(a);
    return total.finalize();
}

void collect_predictions(const RmsgModel& model, const DatasetSpec& spec, std::int64_t n_samples,
                         std::vector<double>& y_out, std::vector<double>& h_out, int n_threads) {
    const auto n_nodes = static_cast<std::size_t>(spec.n_nodes);
    y_out.assign(static_cast<std::size_t>(n_samples) * n_nodes, 0.0);
    h_out.assign(static_cast<std::size_t>(n_samples) * n_nodes, 0.0);
    for_each_sample(spec, n_samples, n_threads, [&](i64 k, const RmsgSample& s) {
        auto pred = rmsg_model_forward(model, s.graph, s.x);
        std::copy(s.y.begin(), s.y.end(), y_out.begin() + static_cast<std::ptrdiff_t>(k) * static_cast<std::ptrdiff_t>(n_nodes));
        std::copy(pred->data.begin(), pred->data.end(),
                  h_out.begin() + static_cast<std::ptrdiff_t>(k) * static_cast<std::ptrdiff_t>(n_nodes));
    });
}

namespace {

Metrics eval_model_stream(const RmsgModel& model, const DatasetSpec& spec, i64 n_samples,
                          int n_threads) {
    const i64 chunk = 256;
    const i64 n_chunks = (n_samples + chunk - 1) / chunk;
    std::vector<MetricsAccumulator> accs(static_cast<std::size_t>(std::max<i64>(n_chunks, 1)));
    for_each_sample(spec, n_samples, n_threads, [&](i64 k, const RmsgSample& s) {
        auto pred = rmsg_model_forward(model, s.graph, s.x);
        accs[static_cast<std::size_t>(k / chunk)].add(s.y, pred->data);
    });
    MetricsAccumulator total;
    for (const auto& a : accs) total.merge(a);
    return total.finalize();
}

}  // namespace

RunResult train_rmsg(const RmsgConfig& cfg, std::uint64_t seed, std::ostream* log,
                     RmsgModel* trained_out) {
    RunResult result;
    result.seed = seed;

    const DatasetSpec train_spec{cfg.n_nodes, cfg.edge_prob, mix_seed(seed, 1)};
    const DatasetSpec val_spec{cfg.n_nodes, cfg.edge_prob, mix_seed(seed, 2)};
    const DatasetSpec test_spec{cfg.n_nodes, cfg.edge_prob, mix_seed(seed, 3)};

    if (cfg.flavor == RmsgFlavor::average) {
        const double mean = average_model_fit(train_spec, cfg.train_samples);
        result.validation = average_model_eval(mean, val_spec, cfg.val_samples, cfg.eval_threads);
        result.test = average_model_eval(mean, test_spec, cfg.test_samples, cfg.eval_threads);
        result.param_count = 1;
        if (log)
            *log << "average model: mean=" << fmt_double(mean) << " test rmse=" << result.test.rmse
                 << " r2=" << result.test.r2 << "\n";
        return result;
    }

    Rng init_rng(mix_seed(seed, 100));
    auto model = RmsgModel::make(cfg, init_rng);
    result.param_count = model.param_count();
    tg::AdamConfig acfg;
    acfg.lr = cfg.lr;
    tg::Adam opt(model.parameters(), acfg);

    const i64 batch = std::max(1, cfg.batch_graphs);
    const i64 n_steps = cfg.train_samples / batch;
    result.steps = n_steps;

    try {
        i64 sample_cursor = 0;
        for (i64 step = 0; step < n_steps; ++step) {
            tg::Tape::Scope scope;
            TensorPtr loss;
            for (i64 b = 0; b < batch; ++b) {
                auto s = make_rmsg_sample(train_spec, sample_cursor++);
                auto pred = rmsg_model_forward(model, s.graph, s.x);
                auto target = tg::Tensor::from_values({static_cast<i64>(s.y.size())}, s.y);
                auto g_loss = tg::sqrt_op(tg::mean_all(tg::square(tg::sub(pred, target))));
                loss = loss ? tg::add(loss, g_loss) : g_loss;
            }
            if (batch > 1) loss = tg::mul_scalar(loss, 1.0 / static_cast<double>(batch));
            opt.zero_grad();
            scope.tape().backward(loss);
            opt.step();

            if (log && cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
                const auto quick =
                    eval_model_stream(model, val_spec, std::min<i64>(cfg.val_samples, 512),
                                      cfg.eval_threads);
                *log << "step " << (step + 1) << "/" << n_steps
                     << " val rmse=" << fmt_double(quick.rmse) << " r2=" << fmt_double(quick.r2)
                     << "\n";
                log->flush();
            }
        }
        result.validation = eval_model_stream(model, val_spec, cfg.val_samples, cfg.eval_threads);
        result.test = eval_model_stream(model, test_spec, cfg.test_samples, cfg.eval_threads);
    } catch (const NumericError& e) {
        result.failed = true;
        result.failure = e.what();
        if (log) *log << "run failed: " << e.what() << "\n";
        return result;
    }

    if (trained_out) *trained_out = model;
    if (log)
        *log << to_string(cfg.flavor) << " seed=" << seed
             << " test rmse=" << fmt_double(result.test.rmse)
             << " mae=" << fmt_double(result.test.mae) << " r2=" << fmt_double(result.test.r2)
             << " params=" << result.param_count << "\n";
    return result;
}

Metrics RmsgRunReport::mean() const {
    Metrics m;
    i64 n = 0;
    for (const auto& r : runs) {
        if (r.failed) continue;
        m.rmse += r.test.rmse;
        m.mae += r.test.mae;
        m.r2 += r.test.r2;
        ++n;
    }
    if (n == 0) throw ContractError("report: all runs failed");
    m.rmse /= static_cast<double>(n);
    m.mae /= static_cast<double>(n);
    m.r2 /= static_cast<double>(n);
    m.count = n;
    return m;
}

Metrics RmsgRunReport::stddev() const {
    const auto mu = mean();
    Metrics s;
    i64 n = 0;
    for (const auto& r : runs) {
        if (r.failed) continue;
        s.rmse += (r.test.rmse - mu.rmse) * (r.test.rmse - mu.rmse);
        s.mae += (r.test.mae - mu.mae) * (r.test.mae - mu.mae);
        s.r2 += (r.test.r2 - mu.r2) * (r.test.r2 - mu.r2);
        ++n;
    }
    if (n < 2) return Metrics{0.0, 0.0, 0.0, n};
    s.rmse = std::sqrt(s.rmse / static_cast<double>(n - 1));
    s.mae = std::sqrt(s.mae / static_cast<double>(n - 1));
    s.r2 = std::sqrt(s.r2 / static_cast<double>(n - 1));
    s.count = n;
    return s;
}

ResidualReport residual_analysis(const std::vector<double>& y, const std::vector<double>& h,
                                 int hist_bins, int label_bins) {
    if (y.size() != h.size()) throw ContractError("residual_analysis: length mismatch");
    if (hist_bins < 2 || label_bins < 2) throw ContractError("residual_analysis: bins must be >= 2");
    ResidualReport rep;
    rep.residuals.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) rep.residuals[i] = y[i] - h[i];

    const auto [rmin_it, rmax_it] = std::minmax_element(rep.residuals.begin(), rep.residuals.end());
    double rmin = *rmin_it, rmax = *rmax_it;
    if (rmin == rmax) rmax = rmin + 1.0;  // degenerate range: single occupied bin
    rep.hist_edges.resize(static_cast<std::size_t>(hist_bins) + 1);
    const double rw = (rmax - rmin) / hist_bins;
    for (int b = 0; b <= hist_bins; ++b)
        rep.hist_edges[static_cast<std::size_t>(b)] = rmin + rw * b;
    rep.hist_counts.assign(static_cast<std::size_t>(hist_bins), 0);
    for (double r : rep.residuals) {
        auto b = static_cast<i64>((r - rmin) / rw);
        b = std::clamp<i64>(b, 0, hist_bins - 1);
        ++rep.hist_counts[static_cast<std::size_t>(b)];
    }

    const auto [ymin_it, ymax_it] = std::minmax_element(y.begin(), y.end());
    double ymin = *ymin_it, ymax = *ymax_it;
    if (ymin == ymax) ymax = ymin + 1.0;
    const double yw = (ymax - ymin) / label_bins;
    rep.label_bin_centers.resize(static_cast<std::size_t>(label_bins));
    rep.label_bin_mean_residual.assign(static_cast<std::size_t>(label_bins), 0.0);
    rep.label_bin_counts.assign(static_cast<std::size_t>(label_bins), 0);
    for (int b = 0; b < label_bins; ++b)
        rep.label_bin_centers[static_cast<std::size_t>(b)] = ymin + yw * (b + 0.5);
    for (std::size_t i = 0; i < y.size(); ++i) {
        auto b = static_cast<i64>((y[i] - ymin) / yw);
        b = std::clamp<i64>(b, 0, label_bins - 1);
        rep.label_bin_mean_residual[static_cast<std::size_t>(b)] += rep.residuals[i];
        ++rep.label_bin_counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < label_bins; ++b)
        if (rep.label_bin_counts[static_cast<std::size_t>(b)] > 0)
            rep.label_bin_mean_residual[static_cast<std::size_t>(b)] /=
                static_cast<double>(rep.label_bin_counts[static_cast<std::size_t>(b)]);
    return rep;
}

std::vector<SweepRow> size_sweep(const RmsgConfig& base, const std::vector<std::int64_t>& hidden_grid,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    std::vector<SweepRow> rows;
    for (auto hidden : hidden_grid) {
        SweepRow row;
        row.hidden = hidden;
        RmsgConfig cfg = base;
        cfg.hidden = hidden;
        cfg.mpnn_width = hidden;
        row.mpnn_width = cfg.mpnn_width;
        for (auto seed : seeds) {
            if (log) *log << "sweep " << to_string(cfg.flavor) << " hidden=" << hidden
                          << " seed=" << seed << "\n";
            row.runs.push_back(train_rmsg(cfg, seed, log));
            row.param_count = row.runs.back().param_count;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double SweepRow::mean_r2() const {
    double s = 0.0;
    i64 n = 0;
    for (const auto& r : runs)
        if (!r.failed) {
            s += r.test.r2;
            ++n;
        }
    return n ? s / static_cast<double>(n) : -1.0;
}

double SweepRow::best_r2() const {
    double best = -1e300;
    for (const auto& r : runs)
        if (!r.failed) best = std::max(best, r.test.r2);
    return best;
}

void write_report_csv(const std::string& path, const RmsgRunReport& report) {
    std::ofstream out(path);
    if (!out) throw LoadError("report: cannot open '" + path + "' for writing");
    out << "seed,failed,rmse,mae,r2,param_count,steps\n";
    for (const auto& r : report.runs)
        out << r.seed << "," << (r.failed ? 1 : 0) << "," << fmt_double(r.test.rmse) << ","
            << fmt_double(r.test.mae) << "," << fmt_double(r.test.r2) << "," << r.param_count
            << "," << r.steps << "\n";
}

void write_report_json(const std::string& path, const RmsgRunReport& report,
                       const std::string& flavor_name) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : report.runs) {
        runs.push_back({{"seed", r.seed},
                        {"failed", r.failed},
                        {"failure", r.failure},
                        {"rmse", r.test.rmse},
                        {"mae", r.test.mae},
                        {"r2", r.test.r2},
                        {"val_rmse", r.validation.rmse},
                        {"param_count", r.param_count},
                        {"steps", r.steps}});
    }
    const auto mu = report.mean();
    const auto sd = report.stddev();
    nlohmann::json doc = {{"flavor", flavor_name},
                          {"runs", std::move(runs)},
                          {"mean", {{"rmse", mu.rmse}, {"mae", mu.mae}, {"r2", mu.r2}}},
                          {"stddev", {{"rmse", sd.rmse}, {"mae", sd.mae}, {"r2", sd.r2}}}};
    std::ofstream out(path);
    if (!out) throw LoadError("report: cannot open '" + path + "' for writing");
    out << doc.dump(1) << "\n";
}

void write_residuals_csv(const std::string& path, const ResidualReport& report) {
    std::ofstream out(path);
    if (!out) throw LoadError("residuals: cannot open '" + path + "' for writing");
    out << "kind,index,left_edge,center,value,count\n";
    for (std::size_t b = 0; b < report.hist_counts.size(); ++b)
        out << "hist," << b << "," << fmt_double(report.hist_edges[b]) << ","
            << fmt_double(0.5 * (report.hist_edges[b] + report.hist_edges[b + 1])) << ",,"
            << report.hist_counts[b] << "\n";
    for (std::size_t b = 0; b < report.label_bin_centers.size(); ++b)
        out << "label_bin," << b << ",," << fmt_double(report.label_bin_centers[b]) << ","
            << fmt_double(report.label_bin_mean_residual[b]) << "," << report.label_bin_counts[b]
            << "\n";
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw LoadError("sweep: cannot open '" + path + "' for writing");
    out << "hidden,mpnn_width,param_count,seed,failed,rmse,mae,r2\n";
    for (const auto& row : rows)
        for (const auto& r : row.runs)
            out << row.hidden << "," << row.mpnn_width << "," << row.param_count << "," << r.seed
                << "," << (r.failed ? 1 : 0) << "," << fmt_double(r.test.rmse) << ","
                << fmt_double(r.test.mae) << "," << fmt_double(r.test.r2) << "\n";
}

}  // namespace gnnflavors::rmsg
