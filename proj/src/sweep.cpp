#include "dap/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>
#include <tuple>

#include "dap/errors.hpp"
#include "dap/util.hpp"

namespace dap {

using nlohmann::json;

PipelineResult run_pipeline(const SplitResult& split, const std::vector<std::size_t>& encoder_dims,
                            const TrainConfig& cfg, ProbeKind probe) {
    ModelSpec spec;
    spec.input_dim = split.train.dims();
    spec.encoder_dims = encoder_dims;
    spec.n_classes = static_cast<std::size_t>(split.train.n_classes);
    spec.seed = cfg.seed;
    PipelineResult out{train(split.train, spec, cfg), {}};
    const Tensor train_emb = out.trained.model.embed(split.train.features);
    const Tensor test_emb = out.trained.model.embed(split.test.features);
    const ProbeInputs in{train_emb,
                         test_emb,
                         split.train.task_labels,
                         split.test.task_labels,
                         split.train.sensitive,
                         split.test.sensitive,
                         split.train.n_classes,
                         split.train.n_domains};
    out.report = probe_report(in, probe, cfg.seed);
    return out;
}

void SweepSpec::validate() const {
    if (beta_grid.empty() || omega_grid.empty()) throw ConfigError("sweep grids must not be empty");
    if (n_runs < 1) throw ConfigError("sweep n_runs must be >= 1");
    for (double b : beta_grid)
        if (!std::isfinite(b) || b < 0.0) throw ConfigError("beta values must be finite and >= 0");
    for (double o : omega_grid)
        if (!std::isfinite(o) || o < 0.0) throw ConfigError("omega values must be finite and >= 0");
}

std::uint64_t run_seed(double beta, double omega, int run, std::uint64_t master_seed) {
    std::uint64_t h = combine_seed(master_seed, std::bit_cast<std::uint64_t>(beta));
    h = combine_seed(h, std::bit_cast<std::uint64_t>(omega));
    return combine_seed(h, static_cast<std::uint64_t>(run));
}

json RunRecord::to_json() const {
    json j{{"beta", beta}, {"omega", omega}, {"run", run}, {"seed", seed}, {"ok", ok}, {"wall_time", wall_time}};
    if (ok) {
        const json fields = report.to_json();
        for (auto& [k, v] : fields.items()) j[k] = v;
    } else {
        j["error"] = error;
    }
    return j;
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    try {
        r.beta = j.at("beta").get<double>();
        r.omega = j.at("omega").get<double>();
        r.run = j.at("run").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.ok = j.at("ok").get<bool>();
        r.wall_time = j.value("wall_time", 0.0);
        if (r.ok) {
            r.report = FairnessReport::from_json(j);
        } else {
            r.error = j.value("error", std::string());
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed sweep record: ") + e.what());
    }
    return r;
}

const char* to_string(Metric m) noexcept {
    switch (m) {
        case Metric::adjusted_parity: return "adjusted_parity";
        case Metric::eod: return "eod";
        case Metric::dpd: return "dpd";
        case Metric::sensitive_accuracy: return "sensitive_accuracy";
        case Metric::task_accuracy: return "task_accuracy";
    }
    return "?";
}

Metric metric_from_string(const std::string& s) {
    for (Metric m : {Metric::adjusted_parity, Metric::eod, Metric::dpd, Metric::sensitive_accuracy,
                     Metric::task_accuracy}) {
        if (s == to_string(m)) return m;
    }
    if (s == "sensitive_acc") return Metric::sensitive_accuracy;
    if (s == "task_acc") return Metric::task_accuracy;
    throw ConfigError("unknown metric '" + s + "'");
}

double metric_value(const FairnessReport& r, Metric m) {
    switch (m) {
        case Metric::adjusted_parity: return r.adjusted_parity;
        case Metric::eod: return r.eod;
        case Metric::dpd: return r.dpd;
        case Metric::sensitive_accuracy: return r.sensitive_accuracy;
        case Metric::task_accuracy: return r.task_accuracy;
    }
    return NAN;
}

Spread summarize(std::vector<double> values) {
    Spread s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) {
        s.median = s.std = NAN;
        return s;
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    s.std = std::sqrt(ss / static_cast<double>(n));
    return s;
}

Spread SweepCellResult::spread(Metric m) const {
    std::vector<double> v;
    for (const auto& r : runs)
        if (r.ok) v.push_back(metric_value(r.report, m));
    return summarize(std::move(v));
}

std::vector<SweepCellResult> aggregate(const SweepSpec& spec, std::vector<RunRecord> records) {
    std::map<std::pair<double, double>, std::map<int, RunRecord>> by_cell;
    for (auto& r : records) by_cell[{r.beta, r.omega}][r.run] = std::move(r);
    std::vector<SweepCellResult> cells;
    for (double b : spec.beta_grid) {
        for (double o : spec.omega_grid) {
            const auto it = by_cell.find({b, o});
            if (it == by_cell.end()) continue;
            SweepCellResult cell{b, o, {}, 0};
            for (auto& [run, rec] : it->second) {
                if (run < 0 || run >= spec.n_runs) continue;
                if (!rec.ok) ++cell.failed;
                cell.runs.push_back(rec);
            }
            if (!cell.runs.empty()) cells.push_back(std::move(cell));
        }
    }
    return cells;
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
    std::vector<RunRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        // A run interrupted mid-write leaves a truncated last line; it is rerun.
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        out.push_back(RunRecord::from_json(j));
    }
    return out;
}

namespace {

struct Task {
    double beta;
    double omega;
    int run;
};

class RecordAppender {
public:
    explicit RecordAppender(const std::filesystem::path& path) {
        if (path.empty()) return;
        bool needs_newline = false;
        {
            std::ifstream in(path, std::ios::binary | std::ios::ate);
            if (in && in.tellg() > 0) {
                in.seekg(-1, std::ios::end);
                needs_newline = in.get() != '\n';
            }
        }
        out_.open(path, std::ios::app);
        if (!out_) throw IoError("cannot append to " + path.string());
        if (needs_newline) out_ << '\n';
    }

    void append(const RunRecord& r) {
        std::lock_guard lock(mu_);
        if (out_.is_open()) {
            out_ << r.to_json().dump() << '\n';
            out_.flush();
            if (!out_) throw IoError("failed writing sweep record");
        }
        records_.push_back(r);
    }

    std::vector<RunRecord> take() { return std::move(records_); }

private:
    std::mutex mu_;
    std::ofstream out_;
    std::vector<RunRecord> records_;
};

RunRecord execute(const SweepSpec& spec, const SplitResult& split, const Task& t) {
    RunRecord r;
    r.beta = t.beta;
    r.omega = t.omega;
    r.run = t.run;
    r.seed = run_seed(t.beta, t.omega, t.run, spec.master_seed);
    TrainConfig cfg = spec.base;
    cfg.dap.beta = t.beta;
    cfg.dap.omega = t.omega;
    cfg.seed = r.seed;
    const auto start = std::chrono::steady_clock::now();
    try {
        r.report = run_pipeline(split, spec.encoder_dims, cfg, spec.probe).report;
    } catch (const Error& e) {
        r.ok = false;
        r.error = e.what();
    }
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace

std::vector<SweepCellResult> run_sweep(const SweepSpec& spec, const SplitResult& split, const SweepOptions& opts) {
    spec.validate();
    spec.base.validate(split.train.n_domains);

    std::vector<RunRecord> done;
    if (opts.resume && !opts.records_path.empty()) done = read_records(opts.records_path);
    std::set<std::tuple<double, double, int>> have;
    for (const auto& r : done) have.insert({r.beta, r.omega, r.run});

    std::vector<Task> tasks;
    for (double b : spec.beta_grid)
        for (double o : spec.omega_grid)
            for (int k = 0; k < spec.n_runs; ++k)
                if (!have.count({b, o, k})) tasks.push_back({b, o, k});

    if (!opts.resume && !opts.records_path.empty()) {
        std::ofstream truncate(opts.records_path, std::ios::trunc);
        if (!truncate) throw IoError("cannot write " + opts.records_path.string());
    }
    RecordAppender appender(opts.records_path);
    std::atomic<std::size_t> next{0};
    std::mutex cb_mu;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            const RunRecord r = execute(spec, split, tasks[i]);
            appender.append(r);
            if (opts.on_record) {
                std::lock_guard lock(cb_mu);
                opts.on_record(r);
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(tasks.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }

    auto fresh = appender.take();
    done.insert(done.end(), fresh.begin(), fresh.end());
    return aggregate(spec, std::move(done));
}

void write_aggregate_csv(std::ostream& out, const std::vector<SweepCellResult>& cells) {
    static constexpr std::pair<Metric, const char*> columns[] = {
        {Metric::adjusted_parity, "adjusted_parity"}, {Metric::eod, "eod"}, {Metric::dpd, "dpd"},
        {Metric::sensitive_accuracy, "sensitive_acc"}, {Metric::task_accuracy, "task_acc"}};
    out << "beta,omega";
    for (const auto& [m, name] : columns) out << ',' << name << "_med," << name << "_std";
    out << '\n';
    const auto num = [](double v) {
        if (std::isnan(v)) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& c : cells) {
        out << num(c.beta) << ',' << num(c.omega);
        for (const auto& [m, name] : columns) {
            const Spread s = c.spread(m);
            out << ',' << num(s.median) << ',' << num(s.std);
        }
        out << '\n';
    }
}

std::vector<TrendSeries> trend_extract(const SweepSpec& spec, const std::vector<SweepCellResult>& cells, Metric metric,
                                       Axis along) {
    std::map<std::pair<double, double>, const SweepCellResult*> index;
    for (const auto& c : cells) index[{c.beta, c.omega}] = &c;
    const auto& xs = along == Axis::beta ? spec.beta_grid : spec.omega_grid;
    const auto& fixed = along == Axis::beta ? spec.omega_grid : spec.beta_grid;
    std::vector<TrendSeries> out;
    for (double f : fixed) {
        TrendSeries s;
        s.fixed = f;
        for (double x : xs) {
            const auto key = along == Axis::beta ? std::pair{x, f} : std::pair{f, x};
            TrendPoint p;
            p.x = x;
            const auto it = index.find(key);
            if (it != index.end()) p.value = it->second->spread(metric);
            p.missing = p.value.count == 0;
            if (p.missing) {
                p.value.median = p.value.std = NAN;
                s.has_gaps = true;
            }
            s.points.push_back(p);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<DeltaBin> accuracy_delta_bins(const std::vector<SweepCellResult>& cells, Metric metric, double width,
                                          std::optional<std::pair<double, double>> baseline) {
    if (!(width > 0.0)) throw ConfigError("bin width must be > 0");
    if (cells.empty()) return {};
    if (!baseline) {
        double bmin = INFINITY, omax = -INFINITY;
        for (const auto& c : cells) bmin = std::min(bmin, c.beta);
        for (const auto& c : cells) omax = std::max(omax, c.omega);
        baseline = std::pair{bmin, omax};
    }
    const auto base = std::find_if(cells.begin(), cells.end(), [&](const SweepCellResult& c) {
        return c.beta == baseline->first && c.omega == baseline->second;
    });
    if (base == cells.end()) throw ContractError("baseline cell is not in the sweep results");
    const double ref = base->spread(Metric::task_accuracy).median;
    if (std::isnan(ref)) throw ContractError("baseline cell has no successful run");

    std::map<long long, std::pair<int, double>> bins;
    for (const auto& c : cells) {
        for (const auto& r : c.runs) {
            if (!r.ok) continue;
            const double delta = ref - r.report.task_accuracy;
            const auto k = static_cast<long long>(std::floor(delta / width + 1e-9));
            auto& [n, sum] = bins[k];
            ++n;
            sum += metric_value(r.report, metric);
        }
    }
    std::vector<DeltaBin> out;
    for (const auto& [k, v] : bins) out.push_back({static_cast<double>(k) * width, v.first, v.second / v.first});
    return out;
}

}  // namespace dap
