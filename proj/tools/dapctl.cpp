// dapctl: generate data, train, evaluate, sweep and print the gamma table.
//
// Configuration is layered: built-in defaults, then the --config JSON file,
// then explicit flags. The resolved configuration is written to the manifest
// of every output directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dap/datapipe.hpp"
#include "dap/errors.hpp"
#include "dap/model.hpp"
#include "dap/probe.hpp"
#include "dap/softmetrics.hpp"
#include "dap/sweep.hpp"
#include "dap/util.hpp"

#ifndef DAP_VERSION
#define DAP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string g17(double v) { return fmt::format("{:.17g}", v); }

json synthetic_to_json(const SyntheticSpec& s) {
    return json{{"m", s.m},
                {"d_informative", s.d_informative},
                {"d_noise", s.d_noise},
                {"n_classes", s.n_classes},
                {"n_domains", s.n_domains},
                {"bias_strength", s.bias_strength},
                {"class_weights", s.class_weights},
                {"proxy_repeats", s.proxy_repeats},
                {"seed", s.seed}};
}

SyntheticSpec synthetic_from_json(const json& j) {
    SyntheticSpec s;
    s.m = j.value("m", s.m);
    s.d_informative = j.value("d_informative", s.d_informative);
    s.d_noise = j.value("d_noise", s.d_noise);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.n_domains = j.value("n_domains", s.n_domains);
    s.bias_strength = j.value("bias_strength", s.bias_strength);
    s.class_weights = j.value("class_weights", s.class_weights);
    s.proxy_repeats = j.value("proxy_repeats", s.proxy_repeats);
    s.seed = j.value("seed", s.seed);
    return s;
}

// Parses "key=value" tokens of --synthetic into a JSON patch.
json parse_synthetic_tokens(const std::vector<std::string>& tokens) {
    static const std::map<std::string, std::string> keys{
        {"m", "m"},
        {"rows", "m"},
        {"bias", "bias_strength"},
        {"bias_strength", "bias_strength"},
        {"n", "n_domains"},
        {"domains", "n_domains"},
        {"n_domains", "n_domains"},
        {"classes", "n_classes"},
        {"n_classes", "n_classes"},
        {"informative", "d_informative"},
        {"d_informative", "d_informative"},
        {"noise", "d_noise"},
        {"d_noise", "d_noise"},
        {"repeats", "proxy_repeats"},
        {"proxy_repeats", "proxy_repeats"},
        {"class_weights", "class_weights"},
        {"weights", "class_weights"},
        {"seed", "seed"},
    };
    json patch = json::object();
    for (const auto& tok : tokens) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw UsageError("--synthetic expects key=value tokens, got '" + tok + "'");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        const auto it = keys.find(key);
        if (it == keys.end()) throw UsageError("unknown --synthetic key '" + key + "'");
        const std::string& field = it->second;
        try {
            if (field == "bias_strength") {
                patch[field] = std::stod(value);
            } else if (field == "class_weights") {
                json w = json::array();
                std::stringstream ss(value);
                std::string part;
                while (std::getline(ss, part, ':')) w.push_back(std::stod(part));
                patch[field] = w;
            } else if (field == "n_classes" || field == "n_domains" || field == "proxy_repeats") {
                patch[field] = std::stoi(value);
            } else {
                if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
                patch[field] = std::stoull(value);
            }
        } catch (const std::logic_error&) {
            throw UsageError("bad value for --synthetic " + key + ": '" + value + "'");
        }
    }
    return patch;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

// Flags shared by every data-consuming subcommand. Optionals stay empty when
// the flag was not given, so they do not override the config file.
struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data;
    std::string schema;
    std::string schema_file;
    std::vector<std::string> synthetic;
    bool synthetic_given = false;
    std::optional<std::uint64_t> split_seed;
    std::optional<std::uint64_t> seed;
};

struct TrainFlags {
    std::optional<double> beta, omega, lr, s_random;
    std::optional<std::size_t> batch_size;
    std::optional<int> epochs;
    std::optional<std::string> optimizer;
    std::optional<bool> balanced;
    bool no_debias = false;
    std::optional<std::string> encoder;
    std::optional<std::string> probe;
};

struct SweepFlags {
    std::optional<std::string> betas, omegas;
    std::optional<int> runs;
    std::optional<int> jobs;
    bool no_resume = false;
    std::optional<std::string> metric_baseline;
    std::optional<double> bin_width;
};

void add_data_flags(CLI::App* cmd, CommonFlags& f, bool need_out) {
    cmd->add_option("--config", f.config_path, "JSON config file; explicit flags override its values")
        ->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", f.out_dir, "Output directory");
    if (need_out) out->required();
    cmd->add_option("--data", f.data, "Input dataset: a CSV file or a dataset cache (.json)");
    cmd->add_option("--schema", f.schema, "Built-in CSV schema: adult, compas, compas5");
    cmd->add_option("--schema-file", f.schema_file, "JSON schema for --data CSV files")->check(CLI::ExistingFile);
    cmd->add_option("--synthetic", f.synthetic,
                    "Synthetic data as key=value tokens: m, bias, domains, classes, informative, noise, repeats, "
                    "weights (colon-separated), seed")
        ->expected(0, -1);
    cmd->add_option("--split-seed", f.split_seed, "Seed of the stratified train/test split");
    cmd->add_option("--seed", f.seed, "Training seed (master seed for sweep)");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--beta", f.beta, "DAP beta (weight of the domain-spread penalty)");
    cmd->add_option("--omega", f.omega, "DAP omega (weight of cross-entropy)");
    cmd->add_option("--lr", f.lr, "Learning rate");
    cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--optimizer", f.optimizer, "adam or sgd");
    cmd->add_option("--balanced", f.balanced, "Per-domain balanced accuracy (true) or plain accuracy (false)");
    cmd->add_flag("--no-debias", f.no_debias, "Train on omega * cross-entropy only");
    cmd->add_option("--s-random", f.s_random, "Chance accuracy reference (default 1/classes)");
    cmd->add_option("--encoder", f.encoder, "Encoder layer widths, comma-separated (default 64,32)");
    cmd->add_option("--probe", f.probe, "balanced-logistic or balanced-tree-ensemble");
}

std::vector<double> parse_doubles(const std::string& s, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(part, &used));
            if (trim(part.substr(used)).size() != 0) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw UsageError(fmt::format("bad value in {}: '{}'", flag, part));
        }
    }
    if (out.empty()) throw UsageError(fmt::format("{} needs at least one value", flag));
    return out;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> out;
    for (double v : parse_doubles(s, "--encoder")) {
        if (!(v >= 1) || v != std::floor(v)) throw UsageError("--encoder widths must be positive integers");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

bool is_compas(const std::string& schema) { return schema.rfind("compas", 0) == 0; }

// Builds the resolved configuration: defaults < config file < flags.
json resolve_config(const CommonFlags& c, const TrainFlags* t, const SweepFlags* s) {
    json file = c.config_path.empty() ? json::object() : read_json_file(c.config_path);
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");

    json flags = json::object();
    if (!c.data.empty()) flags["dataset"]["path"] = c.data;
    if (!c.schema.empty()) flags["dataset"]["schema"] = c.schema;
    if (!c.schema_file.empty()) flags["dataset"]["schema_file"] = c.schema_file;
    if (c.synthetic_given) {
        flags["dataset"]["path"] = nullptr;
        flags["dataset"]["synthetic"] = parse_synthetic_tokens(c.synthetic);
        flags["dataset"]["synthetic"]["enabled"] = true;
    }
    if (c.split_seed) flags["dataset"]["split_seed"] = *c.split_seed;
    if (c.seed) {
        flags["train"]["seed"] = *c.seed;
        flags["sweep"]["master_seed"] = *c.seed;
    }
    if (t) {
        if (t->beta) flags["train"]["dap"]["beta"] = *t->beta;
        if (t->omega) flags["train"]["dap"]["omega"] = *t->omega;
        if (t->lr) flags["train"]["learning_rate"] = *t->lr;
        if (t->batch_size) flags["train"]["batch_size"] = *t->batch_size;
        if (t->epochs) flags["train"]["epochs"] = *t->epochs;
        if (t->optimizer) flags["train"]["optimizer"] = *t->optimizer;
        if (t->balanced) flags["train"]["dap"]["balanced"] = *t->balanced;
        if (t->no_debias) flags["train"]["dap"]["debias"] = false;
        if (t->s_random) flags["train"]["dap"]["s_random"] = *t->s_random;
        if (t->encoder) flags["model"]["encoder_dims"] = parse_widths(*t->encoder);
        if (t->probe) flags["probe"] = *t->probe;
    }
    if (s) {
        if (s->betas) flags["sweep"]["beta_grid"] = parse_doubles(*s->betas, "--betas");
        if (s->omegas) flags["sweep"]["omega_grid"] = parse_doubles(*s->omegas, "--omegas");
        if (s->runs) flags["sweep"]["n_runs"] = *s->runs;
        if (s->bin_width) flags["sweep"]["delta_bin_width"] = *s->bin_width;
        if (s->metric_baseline) flags["sweep"]["delta_baseline"] = parse_doubles(*s->metric_baseline, "--baseline");
    }

    json layered = file;
    layered.merge_patch(flags);

    // Schema decides which training defaults apply.
    std::string schema = "adult";
    if (layered.contains("dataset") && layered["dataset"].contains("schema")) {
        if (!layered["dataset"]["schema"].is_string()) throw ConfigError("dataset.schema must be a string");
        schema = layered["dataset"]["schema"].get<std::string>();
    }
    const TrainConfig train_defaults =
        is_compas(schema) ? TrainConfig::compas_defaults() : TrainConfig::adult_defaults();
    const SweepSpec sweep_defaults;
    json resolved = {
        {"dataset",
         {{"path", nullptr},
          {"schema", schema},
          {"schema_file", nullptr},
          {"split_seed", 0},
          {"synthetic", synthetic_to_json(SyntheticSpec{})}}},
        {"model", {{"encoder_dims", std::vector<std::size_t>{64, 32}}}},
        {"train", train_config_to_json(train_defaults)},
        {"probe", to_string(ProbeKind::balanced_logistic)},
        {"sweep",
         {{"beta_grid", sweep_defaults.beta_grid},
          {"omega_grid", sweep_defaults.omega_grid},
          {"n_runs", sweep_defaults.n_runs},
          {"master_seed", sweep_defaults.master_seed},
          {"delta_bin_width", 0.005},
          {"delta_baseline", nullptr}}},
    };
    resolved["dataset"]["synthetic"]["enabled"] = false;
    resolved.merge_patch(layered);
    return resolved;
}

struct LoadedData {
    TabularDataset dataset;
    std::string description;
};

SchemaConfig schema_for(const json& ds) {
    if (ds.contains("schema_file") && ds["schema_file"].is_string())
        return SchemaConfig::load(ds["schema_file"].get<std::string>());
    const std::string name = ds.value("schema", std::string("adult"));
    if (name == "adult") return SchemaConfig::adult();
    if (name == "compas") return SchemaConfig::compas(false);
    if (name == "compas5") return SchemaConfig::compas(true);
    throw ConfigError("unknown schema '" + name + "' (expected adult, compas, compas5)");
}

LoadedData load_data(const json& cfg) {
    const json& ds = cfg.at("dataset");
    const bool synthetic = ds.at("synthetic").value("enabled", false);
    const bool has_path = ds.contains("path") && ds["path"].is_string();
    if (synthetic && has_path) throw UsageError("give either --data or --synthetic, not both");
    if (synthetic) {
        const SyntheticSpec spec = synthetic_from_json(ds.at("synthetic"));
        return {generate_synthetic(spec), "synthetic"};
    }
    if (!has_path) throw UsageError("no dataset: pass --data PATH or --synthetic key=value ...");
    const fs::path path = ds["path"].get<std::string>();
    if (!fs::exists(path)) throw IoError("dataset not found: " + path.string());
    if (path.extension() == ".json") return {load_dataset(path), path.string()};
    LoadReport report;
    TabularDataset data = load_csv(path, schema_for(ds), &report);
    if (report.rows_skipped > 0)
        std::cerr << fmt::format("dapctl: skipped {} of {} rows in {}\n", report.rows_skipped, report.rows_read,
                                 path.string());
    return {std::move(data), path.string()};
}

void write_manifest(const fs::path& dir, const std::string& command, const json& cfg, const std::string& fp,
                    std::uint64_t seed, const std::string& started) {
    json m{{"format", "dap-manifest"},
           {"version", 1},
           {"tool", "dapctl"},
           {"tool_version", DAP_VERSION},
           {"command", command},
           {"config", cfg},
           {"dataset_fingerprint", fp},
           {"master_seed", seed},
           {"started_at", started},
           {"finished_at", utc_now()}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::string trace_csv(const TrainingTrace& trace) {
    std::string s = "epoch,cross_entropy,mean_accuracy,std_accuracy,adjusted_parity,loss\n";
    for (const auto& r : trace)
        s += fmt::format("{},{},{},{},{},{}\n", r.epoch, g17(r.cross_entropy), g17(r.mean_accuracy),
                         g17(r.std_accuracy), g17(r.adjusted_parity), g17(r.loss));
    return s;
}

FairnessReport evaluate_split(const Mlp& model, const SplitResult& sp, ProbeKind probe, std::uint64_t seed) {
    const Tensor train_emb = model.embed(sp.train.features);
    const Tensor test_emb = model.embed(sp.test.features);
    const ProbeInputs in{train_emb,
                         test_emb,
                         sp.train.task_labels,
                         sp.test.task_labels,
                         sp.train.sensitive,
                         sp.test.sensitive,
                         sp.train.n_classes,
                         sp.train.n_domains};
    return probe_report(in, probe, seed);
}

int cmd_generate(const CommonFlags& c) {
    const std::string started = utc_now();
    if (!c.data.empty()) throw UsageError("generate takes --synthetic, not --data");
    json cfg = resolve_config(c, nullptr, nullptr);
    cfg["dataset"]["synthetic"]["enabled"] = true;
    const LoadedData data = load_data(cfg);
    const fs::path dir = c.out_dir;
    prepare_out_dir(dir);
    save_dataset(dir / "dataset.json", data.dataset);
    write_manifest(dir, "generate", cfg, fingerprint(data.dataset), cfg["dataset"]["synthetic"].value("seed", 0ULL),
                   started);
    std::cout << fmt::format("wrote {} rows to {}\n", data.dataset.rows(), (dir / "dataset.json").string());
    return kExitOk;
}

int cmd_train(const CommonFlags& c, const TrainFlags& t) {
    const std::string started = utc_now();
    const json cfg = resolve_config(c, &t, nullptr);
    const LoadedData data = load_data(cfg);
    const TrainConfig tc = train_config_from_json(cfg.at("train"));
    const auto dims = cfg.at("model").at("encoder_dims").get<std::vector<std::size_t>>();
    const ProbeKind probe = probe_kind_from_string(cfg.at("probe").get<std::string>());
    const fs::path dir = c.out_dir;
    prepare_out_dir(dir);

    const SplitResult sp = split(data.dataset, cfg["dataset"].value("split_seed", 0ULL));
    const PipelineResult result = run_pipeline(sp, dims, tc, probe);
    save_checkpoint(dir / "checkpoint.json", Checkpoint{result.trained.model, tc, result.trained.trace});
    write_text(dir / "trace.csv", trace_csv(result.trained.trace));
    write_text(dir / "report.json", result.report.to_json().dump(2) + "\n");
    write_manifest(dir, "train", cfg, fingerprint(data.dataset), tc.seed, started);
    const auto& r = result.report;
    std::cout << fmt::format("task_accuracy={:.4f} sensitive_accuracy={:.4f} dpd={:.4f} eod={:.4f} "
                             "adjusted_parity={:.4f}\n",
                             r.task_accuracy, r.sensitive_accuracy, r.dpd, r.eod, r.adjusted_parity);
    return kExitOk;
}

int cmd_evaluate(const CommonFlags& c, const TrainFlags& t, const std::string& checkpoint_path) {
    const std::string started = utc_now();
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    json cfg = resolve_config(c, &t, nullptr);
    cfg["checkpoint"] = checkpoint_path;
    cfg["train"] = train_config_to_json(ckpt.config);
    cfg["model"]["encoder_dims"] = ckpt.model.spec().encoder_dims;
    const LoadedData data = load_data(cfg);
    if (data.dataset.dims() != ckpt.model.spec().input_dim)
        throw ConfigError(fmt::format("dataset has {} features but the checkpoint expects {}", data.dataset.dims(),
                                      ckpt.model.spec().input_dim));
    const ProbeKind probe = probe_kind_from_string(cfg.at("probe").get<std::string>());
    const fs::path dir = c.out_dir;
    prepare_out_dir(dir);
    const SplitResult sp = split(data.dataset, cfg["dataset"].value("split_seed", 0ULL));
    const FairnessReport r = evaluate_split(ckpt.model, sp, probe, ckpt.config.seed);
    write_text(dir / "report.json", r.to_json().dump(2) + "\n");
    write_manifest(dir, "evaluate", cfg, fingerprint(data.dataset), ckpt.config.seed, started);
    std::cout << fmt::format("task_accuracy={:.4f} sensitive_accuracy={:.4f} dpd={:.4f} eod={:.4f} "
                             "adjusted_parity={:.4f}\n",
                             r.task_accuracy, r.sensitive_accuracy, r.dpd, r.eod, r.adjusted_parity);
    return kExitOk;
}

constexpr Metric kAllMetrics[] = {Metric::adjusted_parity, Metric::eod, Metric::dpd, Metric::sensitive_accuracy,
                                  Metric::task_accuracy};

std::string trend_csv(const SweepSpec& spec, const std::vector<SweepCellResult>& cells, Axis along) {
    const char* x = along == Axis::beta ? "beta" : "omega";
    const char* fixed = along == Axis::beta ? "omega" : "beta";
    std::string s = fmt::format("metric,{},{},median,std,count,missing\n", fixed, x);
    for (Metric m : kAllMetrics) {
        for (const auto& series : trend_extract(spec, cells, m, along)) {
            for (const auto& p : series.points) {
                s += fmt::format("{},{},{},{},{},{},{}\n", to_string(m), g17(series.fixed), g17(p.x),
                                 p.missing ? "" : g17(p.value.median), p.missing ? "" : g17(p.value.std),
                                 p.value.count, p.missing ? 1 : 0);
            }
        }
    }
    return s;
}

std::string delta_bins_csv(const std::vector<SweepCellResult>& cells, double width,
                           std::optional<std::pair<double, double>> baseline) {
    std::string s = "metric,delta_lower,delta_upper,count,mean\n";
    for (Metric m : kAllMetrics) {
        if (m == Metric::task_accuracy) continue;
        for (const auto& b : accuracy_delta_bins(cells, m, width, baseline))
            s += fmt::format("{},{},{},{},{}\n", to_string(m), g17(b.lower), g17(b.lower + width), b.count,
                             g17(b.mean));
    }
    return s;
}

int default_jobs() {
    if (const char* env = std::getenv("DAP_JOBS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (const std::logic_error&) {
        }
        throw UsageError(fmt::format("DAP_JOBS must be a positive integer, got '{}'", env));
    }
    return 1;
}

int cmd_sweep(const CommonFlags& c, const TrainFlags& t, const SweepFlags& sf) {
    const std::string started = utc_now();
    const json cfg = resolve_config(c, &t, &sf);
    const LoadedData data = load_data(cfg);
    const json& sw = cfg.at("sweep");
    SweepSpec spec;
    spec.beta_grid = sw.at("beta_grid").get<std::vector<double>>();
    spec.omega_grid = sw.at("omega_grid").get<std::vector<double>>();
    spec.n_runs = sw.at("n_runs").get<int>();
    spec.master_seed = sw.at("master_seed").get<std::uint64_t>();
    spec.base = train_config_from_json(cfg.at("train"));
    spec.encoder_dims = cfg.at("model").at("encoder_dims").get<std::vector<std::size_t>>();
    spec.probe = probe_kind_from_string(cfg.at("probe").get<std::string>());
    spec.validate();
    const double width = sw.at("delta_bin_width").get<double>();
    if (!(width > 0)) throw ConfigError("sweep.delta_bin_width must be positive");
    std::optional<std::pair<double, double>> baseline;
    if (!sw.at("delta_baseline").is_null()) {
        const auto b = sw.at("delta_baseline").get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("sweep.delta_baseline must be [beta, omega]");
        baseline = std::make_pair(b[0], b[1]);
    }

    const fs::path dir = c.out_dir;
    prepare_out_dir(dir);
    SweepOptions opts;
    opts.records_path = dir / "records.jsonl";
    opts.jobs = sf.jobs ? *sf.jobs : default_jobs();
    if (opts.jobs < 1) throw UsageError("--jobs must be at least 1");
    opts.resume = !sf.no_resume;
    opts.on_record = [](const RunRecord& r) {
        if (r.ok)
            std::cerr << fmt::format("beta={} omega={} run={} adjusted_parity={:.4f} task_accuracy={:.4f}\n", r.beta,
                                     r.omega, r.run, r.report.adjusted_parity, r.report.task_accuracy);
        else
            std::cerr << fmt::format("beta={} omega={} run={} failed: {}\n", r.beta, r.omega, r.run, r.error);
    };
    const SplitResult sp = split(data.dataset, cfg["dataset"].value("split_seed", 0ULL));
    const auto cells = run_sweep(spec, sp, opts);

    std::ostringstream agg;
    write_aggregate_csv(agg, cells);
    write_text(dir / "aggregate.csv", agg.str());
    write_text(dir / "trend_beta.csv", trend_csv(spec, cells, Axis::beta));
    write_text(dir / "trend_omega.csv", trend_csv(spec, cells, Axis::omega));
    write_text(dir / "delta_bins.csv", delta_bins_csv(cells, width, baseline));
    write_manifest(dir, "sweep", cfg, fingerprint(data.dataset), spec.master_seed, started);

    int failed = 0;
    for (const auto& cell : cells) failed += cell.failed;
    std::cout << fmt::format("{} cells, {} failed runs; results in {}\n", cells.size(), failed, dir.string());
    return kExitOk;
}

double brute_force_gamma(int n) {
    double best = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += (mask >> i) & 1u;
        mean /= n;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = static_cast<double>((mask >> i) & 1u);
            ss += (v - mean) * (v - mean);
        }
        best = std::max(best, std::sqrt(ss / n));
    }
    return best;
}

int cmd_gamma(int n_max) {
    if (n_max < 2) throw UsageError("--n-max must be at least 2");
    std::cout << "n,gamma,brute_force\n";
    for (int n = 2; n <= n_max; ++n) {
        const std::string bf = n <= 9 ? fmt::format("{:.6f}", brute_force_gamma(n)) : "-";
        std::cout << fmt::format("{},{:.6f},{}\n", n, gamma(n), bf);
    }
    return kExitOk;
}

int run(int argc, char** argv) {
    CLI::App app{"Train and audit classifiers against the differential adjusted parity objective"};
    app.set_version_flag("--version", DAP_VERSION);
    app.require_subcommand(1);

    CommonFlags gen_flags, train_common, eval_common, sweep_common;
    TrainFlags train_flags, eval_flags, sweep_train;
    SweepFlags sweep_flags;
    std::string checkpoint;
    int n_max = 9;

    auto* gen = app.add_subcommand("generate", "Write a synthetic biased dataset to OUT/dataset.json");
    add_data_flags(gen, gen_flags, true);

    auto* tr = app.add_subcommand("train", "Train one model, probe its embeddings and write all artifacts");
    add_data_flags(tr, train_common, true);
    add_train_flags(tr, train_flags);

    auto* ev = app.add_subcommand("evaluate", "Probe the embeddings of a saved checkpoint");
    add_data_flags(ev, eval_common, true);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
    ev->add_option("--probe", eval_flags.probe, "balanced-logistic or balanced-tree-ensemble");

    auto* sw = app.add_subcommand("sweep", "Run a beta x omega grid and write records, aggregates and trends");
    add_data_flags(sw, sweep_common, true);
    add_train_flags(sw, sweep_train);
    sw->add_option("--betas", sweep_flags.betas, "Comma-separated beta grid");
    sw->add_option("--omegas", sweep_flags.omegas, "Comma-separated omega grid");
    sw->add_option("--runs", sweep_flags.runs, "Runs per grid cell");
    sw->add_option("--jobs", sweep_flags.jobs, "Worker threads (default: DAP_JOBS or 1)");
    sw->add_flag("--no-resume", sweep_flags.no_resume, "Discard existing records instead of resuming");
    sw->add_option("--baseline", sweep_flags.metric_baseline,
                   "Delta-binning baseline cell as beta,omega (default: smallest beta, largest omega)");
    sw->add_option("--bin-width", sweep_flags.bin_width, "Accuracy-delta bin width (default 0.005)");

    auto* gm = app.add_subcommand("gamma", "Print the maximal domain spread gamma(n) next to a brute-force check");
    gm->add_option("--n-max", n_max, "Largest number of domains (brute force up to 9)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    auto mark = [](CLI::App* cmd, CommonFlags& f) { f.synthetic_given = cmd->count("--synthetic") > 0; };

    if (gen->parsed()) {
        mark(gen, gen_flags);
        return cmd_generate(gen_flags);
    }
    if (tr->parsed()) {
        mark(tr, train_common);
        return cmd_train(train_common, train_flags);
    }
    if (ev->parsed()) {
        mark(ev, eval_common);
        return cmd_evaluate(eval_common, eval_flags, checkpoint);
    }
    if (sw->parsed()) {
        mark(sw, sweep_common);
        return cmd_sweep(sweep_common, sweep_train, sweep_flags);
    }
    return cmd_gamma(n_max);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "dapctl: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergedError& e) {
        std::cerr << "dapctl: training diverged: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DegenerateTargetError& e) {
        std::cerr << "dapctl: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "dapctl: " << e.what() << "\n";
        return kExitIo;
    } catch (const SchemaError& e) {
        std::cerr << "dapctl: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "dapctl: " << e.what() << "\n";
        return kExitUsage;
    } catch (const json::exception& e) {
        std::cerr << "dapctl: bad configuration value: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "dapctl: internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
