#include "dap/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "dap/errors.hpp"
#include "dap/util.hpp"

namespace dap {

using nlohmann::json;

const char* to_string(ColumnKind kind) noexcept {
    switch (kind) {
        case ColumnKind::continuous: return "continuous";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::dropped: return "dropped";
    }
    return "?";
}

ColumnKind column_kind_from_string(const std::string& s) {
    if (s == "continuous") return ColumnKind::continuous;
    if (s == "categorical") return ColumnKind::categorical;
    if (s == "dropped" || s == "drop") return ColumnKind::dropped;
    throw SchemaError("unknown column kind '" + s + "'");
}

void TabularDataset::validate() const {
    const std::size_t m = features.rows();
    if (task_labels.size() != m || sensitive.size() != m) throw ContractError("dataset vectors differ in length");
    if (continuous.size() != features.cols() || feature_names.size() != features.cols()) {
        throw ContractError("dataset feature metadata does not match feature width");
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (task_labels[i] < 0 || task_labels[i] >= n_classes) throw ContractError("task label out of range");
        if (sensitive[i] < 0 || sensitive[i] >= n_domains) throw ContractError("sensitive domain out of range");
    }
    if (!features.all_finite()) throw ContractError("dataset features contain non-finite values");
}

TabularDataset TabularDataset::subset(std::span<const std::size_t> rows) const {
    TabularDataset out = *this;
    out.features = features.gather_rows(rows);
    out.task_labels.clear();
    out.sensitive.clear();
    for (std::size_t r : rows) {
        out.task_labels.push_back(task_labels.at(r));
        out.sensitive.push_back(sensitive.at(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schemas

SchemaConfig SchemaConfig::adult() {
    SchemaConfig s;
    s.name = "adult";
    s.target_column = "income";
    s.target_positive = {">50K", ">50K."};
    s.target_names = {"<=50K", ">50K"};
    s.sensitive_column = "gender";
    s.sensitive_map = {{"Male", 0}, {"Female", 1}};
    s.sensitive_names = {"Male", "Female"};
    s.aliases = {{"sex", "gender"}, {"educational-num", "education-num"}, {"education_num", "education-num"},
                 {"class", "income"}, {"marital_status", "marital-status"}, {"capital_gain", "capital-gain"},
                 {"capital_loss", "capital-loss"}, {"hours_per_week", "hours-per-week"},
                 {"native_country", "native-country"}};
    for (const char* c : {"age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"})
        s.column_kinds[c] = ColumnKind::continuous;
    for (const char* c : {"workclass", "marital-status", "occupation", "relationship", "race", "native-country"})
        s.column_kinds[c] = ColumnKind::categorical;
    // education repeats education-num.
    s.drop = {"education"};
    s.infer_unlisted = false;
    return s;
}

SchemaConfig SchemaConfig::compas(bool five_class) {
    SchemaConfig s;
    s.name = five_class ? "compas5" : "compas";
    s.target_column = "two_year_recid";
    s.target_map = {{"0", 0}, {"1", 1}};
    s.target_names = {"no_recid", "recid"};
    s.sensitive_column = "race";
    if (five_class) {
        s.sensitive_map = {{"African-American", 0}, {"Asian", 1}, {"Hispanic", 2}, {"Native American", 3}};
        s.sensitive_default = 4;
        s.sensitive_names = {"African-American", "Asian", "Hispanic", "Native American", "Other"};
    } else {
        s.sensitive_map = {{"African-American", 1}};
        s.sensitive_default = 0;
        s.sensitive_names = {"Other", "African-American"};
    }
    for (const char* c : {"age", "juv_fel_count", "juv_misd_count", "juv_other_count", "priors_count",
                          "decile_score", "v_decile_score", "days_b_screening_arrest"})
        s.column_kinds[c] = ColumnKind::continuous;
    for (const char* c : {"sex", "age_cat", "c_charge_degree", "score_text"})
        s.column_kinds[c] = ColumnKind::categorical;
    s.infer_unlisted = false;
    return s;
}

SchemaConfig SchemaConfig::from_json(const json& j) {
    SchemaConfig s;
    try {
        s.name = j.value("name", std::string("generic"));
        s.target_column = j.at("target").get<std::string>();
        s.sensitive_column = j.at("sensitive").get<std::string>();
        s.target_positive = j.value("target_positive", std::vector<std::string>{});
        s.target_names = j.value("target_names", std::vector<std::string>{});
        s.target_map = j.value("target_map", std::map<std::string, int>{});
        s.sensitive_map = j.value("sensitive_map", std::map<std::string, int>{});
        if (j.contains("sensitive_default") && !j.at("sensitive_default").is_null())
            s.sensitive_default = j.at("sensitive_default").get<int>();
        s.sensitive_names = j.value("sensitive_names", std::vector<std::string>{});
        for (const auto& [name, kind] : j.value("columns", std::map<std::string, std::string>{}))
            s.column_kinds[name] = column_kind_from_string(kind);
        s.drop = j.value("drop", std::vector<std::string>{});
        s.aliases = j.value("aliases", std::map<std::string, std::string>{});
        s.infer_unlisted = j.value("infer_unlisted", true);
        const std::string enc = j.value("categorical_encoding", std::string("one_hot"));
        if (enc == "one_hot") {
            s.encoding = CategoricalEncoding::one_hot;
        } else if (enc == "index") {
            s.encoding = CategoricalEncoding::index;
        } else {
            throw SchemaError("unknown categorical_encoding '" + enc + "'");
        }
        if (j.contains("missing_tokens")) s.missing_tokens = j.at("missing_tokens").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid schema config: ") + e.what());
    }
    return s;
}

SchemaConfig SchemaConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema config " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw SchemaError("schema config " + path.string() + ": " + e.what());
    }
}

json SchemaConfig::to_json() const {
    json j;
    j["name"] = name;
    j["target"] = target_column;
    j["sensitive"] = sensitive_column;
    if (!target_positive.empty()) j["target_positive"] = target_positive;
    if (!target_names.empty()) j["target_names"] = target_names;
    if (!target_map.empty()) j["target_map"] = target_map;
    if (!sensitive_map.empty()) j["sensitive_map"] = sensitive_map;
    j["sensitive_default"] = sensitive_default ? json(*sensitive_default) : json(nullptr);
    if (!sensitive_names.empty()) j["sensitive_names"] = sensitive_names;
    json cols = json::object();
    for (const auto& [name, kind] : column_kinds) cols[name] = to_string(kind);
    j["columns"] = cols;
    j["drop"] = drop;
    j["aliases"] = aliases;
    j["infer_unlisted"] = infer_unlisted;
    j["categorical_encoding"] = encoding == CategoricalEncoding::one_hot ? "one_hot" : "index";
    j["missing_tokens"] = missing_tokens;
    return j;
}

// ---------------------------------------------------------------------------
// CSV

std::optional<std::vector<std::string>> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    if (quoted) return std::nullopt;
    fields.push_back(std::move(cur));
    return fields;
}

namespace {

std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (b != e && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || ptr != e || !std::isfinite(v)) return std::nullopt;
    return v;
}

struct LabelCoding {
    std::vector<std::string> names;
    std::map<std::string, int> map;
    std::optional<int> fallback;
    bool observed = false;   // classes are the sorted observed values

    std::optional<int> code(const std::string& v) const {
        if (auto it = map.find(v); it != map.end()) return it->second;
        return fallback;
    }
};

}  // namespace

TabularDataset parse_csv(std::istream& in, const SchemaConfig& schema, LoadReport* report) {
    LoadReport local;
    LoadReport& rep = report ? *report : local;
    rep = LoadReport{};

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("CSV input is empty");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    auto header_fields = split_csv_line(line);
    if (!header_fields) throw SchemaError("CSV header has an unterminated quote");

    std::vector<std::string> header;
    for (auto& h : *header_fields) {
        std::string name = trim(h);
        if (auto it = schema.aliases.find(name); it != schema.aliases.end()) name = it->second;
        header.push_back(std::move(name));
    }
    const std::size_t width = header.size();

    auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < width; ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    const auto target_idx = find_col(schema.target_column);
    if (!target_idx) throw SchemaError("missing target column '" + schema.target_column + "'");
    const auto sens_idx = find_col(schema.sensitive_column);
    if (!sens_idx) throw SchemaError("missing sensitive column '" + schema.sensitive_column + "'");
    for (const auto& [name, kind] : schema.column_kinds) {
        if (!find_col(name)) throw SchemaError("missing column '" + name + "' declared in schema");
    }

    // Column kinds; nullopt means "infer after reading".
    std::vector<std::optional<ColumnKind>> kinds(width);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < width; ++i) {
        const std::string& name = header[i];
        const bool duplicate = !seen.insert(name).second;
        if (duplicate || i == *target_idx || i == *sens_idx ||
            std::find(schema.drop.begin(), schema.drop.end(), name) != schema.drop.end()) {
            kinds[i] = ColumnKind::dropped;
        } else if (auto it = schema.column_kinds.find(name); it != schema.column_kinds.end()) {
            kinds[i] = it->second;
        } else if (!schema.infer_unlisted) {
            kinds[i] = ColumnKind::dropped;
        }
    }

    const std::set<std::string> missing(schema.missing_tokens.begin(), schema.missing_tokens.end());
    auto is_missing = [&](const std::string& v) { return missing.count(v) > 0; };

    LabelCoding target;
    if (!schema.target_positive.empty()) {
        for (const auto& v : schema.target_positive) target.map[v] = 1;
        target.fallback = 0;
        target.names = schema.target_names.size() == 2 ? schema.target_names
                                                       : std::vector<std::string>{"negative", "positive"};
    } else if (!schema.target_map.empty()) {
        target.map = schema.target_map;
        target.names = schema.target_names;
    } else {
        target.observed = true;
    }
    LabelCoding sens;
    if (!schema.sensitive_map.empty() || schema.sensitive_default) {
        sens.map = schema.sensitive_map;
        sens.fallback = schema.sensitive_default;
        sens.names = schema.sensitive_names;
    } else {
        sens.observed = true;
    }

    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++rep.rows_read;
        auto fail = [&](std::string reason) {
            ++rep.rows_skipped;
            rep.errors.push_back(RowError{line_no, std::move(reason)});
        };
        auto fields = split_csv_line(line);
        if (!fields) {
            fail("unterminated quote");
            continue;
        }
        if (fields->size() != width) {
            fail("expected " + std::to_string(width) + " fields, got " + std::to_string(fields->size()));
            continue;
        }
        for (auto& f : *fields) f = trim(f);
        const std::string& tv = (*fields)[*target_idx];
        const std::string& sv = (*fields)[*sens_idx];
        if (is_missing(tv) || (!target.observed && !target.code(tv))) {
            fail("unusable target value '" + tv + "'");
            continue;
        }
        if (is_missing(sv) || (!sens.observed && !sens.code(sv))) {
            fail("unusable sensitive value '" + sv + "'");
            continue;
        }
        bool ok = true;
        for (std::size_t c = 0; c < width && ok; ++c) {
            if (kinds[c] == ColumnKind::continuous && !is_missing((*fields)[c]) && !parse_number((*fields)[c])) {
                fail("column '" + header[c] + "': not a number: '" + (*fields)[c] + "'");
                ok = false;
            }
        }
        if (ok) rows.push_back(std::move(*fields));
    }
    if (rows.empty()) throw SchemaError("CSV contains no usable rows");

    for (std::size_t c = 0; c < width; ++c) {
        if (kinds[c]) continue;
        bool numeric = true;
        for (const auto& r : rows)
            if (!is_missing(r[c]) && !parse_number(r[c])) numeric = false;
        kinds[c] = numeric ? ColumnKind::continuous : ColumnKind::categorical;
    }

    auto finish_coding = [&](LabelCoding& lc, std::size_t idx, const char* what) {
        if (lc.observed) {
            std::set<std::string> values;
            for (const auto& r : rows) values.insert(r[idx]);
            int k = 0;
            for (const auto& v : values) {
                lc.map[v] = k++;
                lc.names.push_back(v);
            }
        }
        int n = 0;
        for (const auto& [v, code] : lc.map) n = std::max(n, code + 1);
        if (lc.fallback) n = std::max(n, *lc.fallback + 1);
        if (lc.names.size() < static_cast<std::size_t>(n)) {
            for (int k = static_cast<int>(lc.names.size()); k < n; ++k) lc.names.push_back(std::to_string(k));
        }
        lc.names.resize(n);
        if (n < 2) throw SchemaError(std::string(what) + " column must define at least 2 values");
        return n;
    };

    TabularDataset ds;
    ds.n_classes = finish_coding(target, *target_idx, "target");
    ds.n_domains = finish_coding(sens, *sens_idx, "sensitive");
    ds.class_names = target.names;
    ds.domain_names = sens.names;

    std::size_t offset = 0;
    for (std::size_t c = 0; c < width; ++c) {
        ColumnMeta meta;
        meta.name = header[c];
        meta.kind = *kinds[c];
        if (meta.kind == ColumnKind::categorical) {
            std::set<std::string> values;
            for (const auto& r : rows)
                if (!is_missing(r[c])) values.insert(r[c]);
            meta.categories.assign(values.begin(), values.end());
            meta.width = schema.encoding == CategoricalEncoding::one_hot ? meta.categories.size() : 1;
        } else if (meta.kind == ColumnKind::continuous) {
            meta.width = 1;
        }
        meta.offset = offset;
        offset += meta.width;
        if (meta.kind == ColumnKind::continuous) {
            ds.feature_names.push_back(meta.name);
            ds.continuous.push_back(1);
        } else if (meta.kind == ColumnKind::categorical) {
            if (schema.encoding == CategoricalEncoding::one_hot) {
                for (const auto& v : meta.categories) {
                    ds.feature_names.push_back(meta.name + "=" + v);
                    ds.continuous.push_back(0);
                }
            } else {
                ds.feature_names.push_back(meta.name);
                ds.continuous.push_back(0);
            }
        }
        ds.columns.push_back(std::move(meta));
    }

    ds.features = Tensor(rows.size(), offset);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        for (std::size_t c = 0; c < width; ++c) {
            const ColumnMeta& meta = ds.columns[c];
            const std::string& v = row[c];
            if (meta.kind == ColumnKind::continuous) {
                ds.features(r, meta.offset) = is_missing(v) ? -1.0 : *parse_number(v);
            } else if (meta.kind == ColumnKind::categorical) {
                if (is_missing(v)) {
                    for (std::size_t k = 0; k < meta.width; ++k) ds.features(r, meta.offset + k) = -1.0;
                    continue;
                }
                const auto it = std::lower_bound(meta.categories.begin(), meta.categories.end(), v);
                const auto idx = static_cast<std::size_t>(it - meta.categories.begin());
                if (schema.encoding == CategoricalEncoding::one_hot) {
                    ds.features(r, meta.offset + idx) = 1.0;
                } else {
                    ds.features(r, meta.offset) = static_cast<double>(idx);
                }
            }
        }
        ds.task_labels.push_back(*target.code(row[*target_idx]));
        ds.sensitive.push_back(*sens.code(row[*sens_idx]));
    }
    ds.validate();
    return ds;
}

TabularDataset load_csv(const std::filesystem::path& path, const SchemaConfig& schema, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_csv(in, schema, report);
}

// ---------------------------------------------------------------------------
// Normalization and split

Normalization fit_normalization(const TabularDataset& ds) {
    const std::size_t d = ds.dims();
    const std::size_t m = ds.rows();
    Normalization n;
    n.mean.assign(d, 0.0);
    n.scale.assign(d, 1.0);
    n.applied.assign(ds.continuous.begin(), ds.continuous.end());
    if (m == 0) return n;
    for (std::size_t c = 0; c < d; ++c) {
        if (!n.applied[c]) continue;
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) s += ds.features(r, c);
        const double mu = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t r = 0; r < m; ++r) ss += (ds.features(r, c) - mu) * (ds.features(r, c) - mu);
        const double sd = std::sqrt(ss / static_cast<double>(m));
        n.mean[c] = mu;
        n.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return n;
}

void apply_normalization(TabularDataset& ds, const Normalization& norm) {
    if (norm.mean.size() != ds.dims()) throw DimensionError("normalization width does not match dataset");
    for (std::size_t r = 0; r < ds.rows(); ++r)
        for (std::size_t c = 0; c < ds.dims(); ++c)
            if (norm.applied[c]) ds.features(r, c) = (ds.features(r, c) - norm.mean[c]) / norm.scale[c];
    ds.normalization = norm;
}

SplitResult split(const TabularDataset& ds, std::uint64_t seed, int train_parts, int test_parts) {
    const std::size_t m = ds.rows();
    if (m < 8) throw ContractError("split needs at least 8 rows, got " + std::to_string(m));
    if (train_parts <= 0 || test_parts <= 0) throw ContractError("split ratio parts must be positive");
    if (ds.normalization) throw ContractError("dataset is already normalized");

    std::mt19937_64 rng(mix64(seed));
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < m; ++i) cells[{ds.task_labels[i], ds.sensitive[i]}].push_back(i);

    const double frac = static_cast<double>(test_parts) / (train_parts + test_parts);
    const auto target = static_cast<long>(std::llround(static_cast<double>(m) * frac));

    struct Quota {
        std::vector<std::size_t>* rows;
        double ideal;
        long lo, hi, n;
    };
    std::vector<Quota> quotas;
    long assigned = 0;
    for (auto& [key, rows] : cells) {
        std::shuffle(rows.begin(), rows.end(), rng);
        const long n = static_cast<long>(rows.size());
        const double ideal = static_cast<double>(n) * frac;
        const long lo = n >= 2 ? 1 : 0;
        const long hi = n >= 2 ? n - 1 : 0;
        const long take = std::clamp(static_cast<long>(std::floor(ideal)), lo, hi);
        quotas.push_back(Quota{&rows, ideal, lo, hi, take});
        assigned += take;
    }
    // Largest-remainder correction towards the exact test size.
    while (assigned != target) {
        Quota* best = nullptr;
        double best_key = 0.0;
        for (auto& q : quotas) {
            const bool can = assigned < target ? q.n < q.hi : q.n > q.lo;
            if (!can) continue;
            const double key = assigned < target ? q.ideal - q.n : q.n - q.ideal;
            if (!best || key > best_key) {
                best = &q;
                best_key = key;
            }
        }
        if (!best) break;
        best->n += assigned < target ? 1 : -1;
        assigned += assigned < target ? 1 : -1;
    }

    SplitResult out;
    for (const auto& q : quotas) {
        for (long i = 0; i < static_cast<long>(q.rows->size()); ++i)
            (i < q.n ? out.test_rows : out.train_rows).push_back((*q.rows)[i]);
    }
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    std::shuffle(out.train_rows.begin(), out.train_rows.end(), rng);
    std::shuffle(out.test_rows.begin(), out.test_rows.end(), rng);

    out.train = ds.subset(out.train_rows);
    out.test = ds.subset(out.test_rows);
    const Normalization norm = fit_normalization(out.train);
    apply_normalization(out.train, norm);
    apply_normalization(out.test, norm);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
    if (m < 1) throw ConfigError("synthetic m must be positive");
    if (d_informative < 1) throw ConfigError("synthetic d_informative must be positive");
    if (n_classes < 2) throw ConfigError("synthetic n_classes must be >= 2");
    if (d_informative < static_cast<std::size_t>(n_classes))
        throw ConfigError("synthetic d_informative must be >= n_classes");
    if (n_domains < 2) throw ConfigError("synthetic n_domains must be >= 2");
    if (!(bias_strength >= 0.0 && bias_strength <= 1.0)) throw ConfigError("bias_strength must lie in [0, 1]");
    if (proxy_repeats < 1) throw ConfigError("proxy_repeats must be >= 1");
    if (!class_weights.empty()) {
        if (class_weights.size() != static_cast<std::size_t>(n_classes))
            throw ConfigError("class_weights needs one entry per class");
        double total = 0.0;
        for (double w : class_weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("class_weights must be finite and >= 0");
            total += w;
        }
        if (!(total > 0.0)) throw ConfigError("class_weights must not all be zero");
    }
}

namespace {

constexpr double kClassSeparation = 5.0;
constexpr double kReferenceExponent = 20.0;

}  // namespace

TabularDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(mix64(spec.seed ^ 0x5eed5eedULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> prior = spec.class_weights;
    if (prior.empty()) prior.assign(spec.n_classes, 1.0);
    std::discrete_distribution<int> pick_class(prior.begin(), prior.end());
    std::uniform_int_distribution<int> pick_domain(0, spec.n_domains - 1);
    std::uniform_int_distribution<int> pick_repeat(0, spec.proxy_repeats - 1);

    const std::size_t di = spec.d_informative;
    const std::size_t dn = spec.d_noise;
    const std::size_t d = di + dn + 2;
    // Class means on distinct axes of the informative block, kClassSeparation apart.
    std::vector<std::vector<double>> class_mean(spec.n_classes, std::vector<double>(di, 0.0));
    for (int c = 0; c < spec.n_classes; ++c) class_mean[c][c] = kClassSeparation / std::numbers::sqrt2;
    const double reference_rate = std::pow(spec.bias_strength, kReferenceExponent);
    const double sectors = static_cast<double>(spec.proxy_repeats * spec.n_domains);

    TabularDataset ds;
    ds.n_classes = spec.n_classes;
    ds.n_domains = spec.n_domains;
    ds.features = Tensor(spec.m, d);
    for (std::size_t r = 0; r < spec.m; ++r) {
        const int domain = pick_domain(rng);
        const int merit = pick_class(rng);
        for (std::size_t j = 0; j < di; ++j) ds.features(r, j) = class_mean[merit][j] + gauss(rng);
        for (std::size_t j = di; j < di + dn; ++j) ds.features(r, j) = gauss(rng);
        // Angular sector code: sector k belongs to domain k mod N. Invisible to
        // a linear model, learnable by the encoder.
        const int sector = domain + spec.n_domains * pick_repeat(rng);
        const double theta = (sector + unif(rng)) * 2.0 * std::numbers::pi / sectors;
        const double radius = std::sqrt(-2.0 * std::log(1.0 - unif(rng)));
        ds.features(r, di + dn) = radius * std::cos(theta);
        ds.features(r, di + dn + 1) = radius * std::sin(theta);

        const double rate = domain == 0 ? reference_rate : spec.bias_strength;
        const int label = unif(rng) < rate ? domain % spec.n_classes : merit;
        ds.task_labels.push_back(label);
        ds.sensitive.push_back(domain);
    }
    for (int c = 0; c < spec.n_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
    for (int k = 0; k < spec.n_domains; ++k) ds.domain_names.push_back("domain" + std::to_string(k));
    for (std::size_t j = 0; j < d; ++j) {
        std::string name;
        if (j < di) name = "inf" + std::to_string(j);
        else if (j < di + dn) name = "noise" + std::to_string(j - di);
        else name = "proxy" + std::to_string(j - di - dn);
        ds.columns.push_back(ColumnMeta{name, ColumnKind::continuous, {}, j, 1});
        ds.feature_names.push_back(name);
        ds.continuous.push_back(1);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Cache

json dataset_to_json(const TabularDataset& ds) {
    json j;
    j["format"] = "dap-dataset";
    j["version"] = 1;
    j["rows"] = ds.rows();
    j["cols"] = ds.dims();
    j["n_classes"] = ds.n_classes;
    j["n_domains"] = ds.n_domains;
    j["class_names"] = ds.class_names;
    j["domain_names"] = ds.domain_names;
    json cols = json::array();
    for (const auto& c : ds.columns) {
        cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"categories", c.categories},
                        {"offset", c.offset}, {"width", c.width}});
    }
    j["columns"] = cols;
    j["feature_names"] = ds.feature_names;
    j["continuous"] = ds.continuous;
    if (ds.normalization) {
        j["normalization"] = {{"mean", ds.normalization->mean},
                              {"scale", ds.normalization->scale},
                              {"applied", ds.normalization->applied}};
    } else {
        j["normalization"] = nullptr;
    }
    j["features"] = std::vector<double>(ds.features.data().begin(), ds.features.data().end());
    j["task_labels"] = ds.task_labels;
    j["sensitive"] = ds.sensitive;
    return j;
}

TabularDataset dataset_from_json(const json& j) {
    try {
        if (j.at("format") != "dap-dataset") throw SchemaError("not a dap-dataset file");
        if (j.at("version").get<int>() != 1) throw SchemaError("unsupported dataset cache version");
        TabularDataset ds;
        const auto rows = j.at("rows").get<std::size_t>();
        const auto cols = j.at("cols").get<std::size_t>();
        ds.features = Tensor(rows, cols, j.at("features").get<std::vector<double>>());
        ds.n_classes = j.at("n_classes").get<int>();
        ds.n_domains = j.at("n_domains").get<int>();
        ds.class_names = j.at("class_names").get<std::vector<std::string>>();
        ds.domain_names = j.at("domain_names").get<std::vector<std::string>>();
        for (const auto& c : j.at("columns")) {
            ds.columns.push_back(ColumnMeta{c.at("name").get<std::string>(),
                                            column_kind_from_string(c.at("kind").get<std::string>()),
                                            c.at("categories").get<std::vector<std::string>>(),
                                            c.at("offset").get<std::size_t>(), c.at("width").get<std::size_t>()});
        }
        ds.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        ds.continuous = j.at("continuous").get<std::vector<std::uint8_t>>();
        if (!j.at("normalization").is_null()) {
            const auto& n = j.at("normalization");
            ds.normalization = Normalization{n.at("mean").get<std::vector<double>>(),
                                             n.at("scale").get<std::vector<double>>(),
                                             n.at("applied").get<std::vector<std::uint8_t>>()};
        }
        ds.task_labels = j.at("task_labels").get<std::vector<int>>();
        ds.sensitive = j.at("sensitive").get<std::vector<int>>();
        ds.validate();
        return ds;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed dataset cache: ") + e.what());
    } catch (const DimensionError& e) {
        throw SchemaError(std::string("malformed dataset cache: ") + e.what());
    }
}

void save_dataset(const std::filesystem::path& path, const TabularDataset& ds) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << dataset_to_json(ds).dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

TabularDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return dataset_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw SchemaError("dataset cache " + path.string() + ": " + e.what());
    }
}

std::string fingerprint(const TabularDataset& ds) {
    Fnv1a h;
    h.update_value(static_cast<std::uint64_t>(ds.rows()));
    h.update_value(static_cast<std::uint64_t>(ds.dims()));
    h.update_value(ds.n_classes);
    h.update_value(ds.n_domains);
    h.update(ds.features.data().data(), ds.features.size() * sizeof(double));
    h.update(ds.task_labels.data(), ds.task_labels.size() * sizeof(int));
    h.update(ds.sensitive.data(), ds.sensitive.size() * sizeof(int));
    return h.hex();
}

}  // namespace dap
