#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "dap/datapipe.hpp"
#include "dap/errors.hpp"
#include "dap/probe.hpp"

using namespace dap;

namespace {

const char* kFixture =
    "age,color,score,group,label\n"
    "30,red,1.5,a,yes\n"
    "41,blue,2.0,b,no\n"
    "?,green,0.5,a,no\n"
    "25,red,3.0,b,yes\n"
    "52,,1.0,a,no\n"
    "33,blue,2.5,b,no\n"
    "47,green,1.5,a,yes\n"
    "29,red,0.0,b,no\n"
    "38,blue,4.0,a,yes\n"
    "60,green,2.0,b,no\n";

SchemaConfig fixture_schema() {
    return SchemaConfig::from_json(nlohmann::json::parse(R"({
        "target": "label",
        "target_positive": ["yes"],
        "sensitive": "group",
        "columns": {"age": "continuous", "color": "categorical"},
        "drop": ["score"]
    })"));
}

TabularDataset parse_fixture() {
    std::istringstream in(kFixture);
    return parse_csv(in, fixture_schema());
}

}  // namespace

TEST(LoadCsv, GenericFixtureExactTensor) {
    const TabularDataset ds = parse_fixture();
    const Tensor expected = Tensor::from_rows({{30, 0, 0, 1},
                                               {41, 1, 0, 0},
                                               {-1, 0, 1, 0},
                                               {25, 0, 0, 1},
                                               {52, -1, -1, -1},
                                               {33, 1, 0, 0},
                                               {47, 0, 1, 0},
                                               {29, 0, 0, 1},
                                               {38, 1, 0, 0},
                                               {60, 0, 1, 0}});
    EXPECT_EQ(ds.features, expected);
    EXPECT_EQ(ds.task_labels, (std::vector<int>{1, 0, 0, 1, 0, 0, 1, 0, 1, 0}));
    EXPECT_EQ(ds.sensitive, (std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1}));
    EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"age", "color=blue", "color=green", "color=red"}));
    EXPECT_EQ(ds.continuous, (std::vector<std::uint8_t>{1, 0, 0, 0}));
}

TEST(LoadCsv, IndexEncoding) {
    SchemaConfig s = fixture_schema();
    s.encoding = CategoricalEncoding::index;
    std::istringstream in(kFixture);
    const TabularDataset ds = parse_csv(in, s);
    ASSERT_EQ(ds.dims(), 2u);
    EXPECT_EQ(ds.features(0, 1), 2.0);
    EXPECT_EQ(ds.features(1, 1), 0.0);
    EXPECT_EQ(ds.features(4, 1), -1.0);
}

TEST(LoadCsv, MissingColumnIsSchemaError) {
    SchemaConfig s = fixture_schema();
    s.sensitive_column = "nope";
    std::istringstream in(kFixture);
    EXPECT_THROW(parse_csv(in, s), SchemaError);
}

TEST(LoadCsv, BadRowsAreSkippedWithLineNumbers) {
    std::string text = kFixture;
    text += "abc,red,1,a,yes\n";
    text += "31,red,1,a\n";
    std::istringstream in(text);
    LoadReport rep;
    const TabularDataset ds = parse_csv(in, fixture_schema(), &rep);
    EXPECT_EQ(ds.rows(), 10u);
    EXPECT_EQ(rep.rows_read, 12u);
    EXPECT_EQ(rep.rows_skipped, 2u);
    ASSERT_EQ(rep.errors.size(), 2u);
    EXPECT_EQ(rep.errors[0].line, 12u);
    EXPECT_EQ(rep.errors[1].line, 13u);
}

TEST(LoadCsv, QuotedFields) {
    const auto f = split_csv_line(R"(a,"b,c","d ""e""")");
    ASSERT_TRUE(f);
    EXPECT_EQ(*f, (std::vector<std::string>{"a", "b,c", "d \"e\""}));
    EXPECT_FALSE(split_csv_line(R"(a,"b)"));
}

TEST(LoadCsv, AdultSchemaShape) {
    std::istringstream in(
        "age,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,"
        "capital-gain,capital-loss,hours-per-week,native-country,income\n"
        "39,State-gov,77516,Bachelors,13,Never-married,Adm-clerical,Not-in-family,White,Male,2174,0,40,"
        "United-States,<=50K\n"
        "50,Self-emp,83311,Bachelors,13,Married,Exec,Husband,White,Male,0,0,13,United-States,>50K\n"
        "38,Private,215646,HS-grad,9,Divorced,Handlers,Not-in-family,White,Female,0,0,40,?,<=50K.\n");
    const TabularDataset ds = parse_csv(in, SchemaConfig::adult());
    EXPECT_EQ(ds.n_classes, 2);
    EXPECT_EQ(ds.n_domains, 2);
    EXPECT_EQ(ds.task_labels, (std::vector<int>{0, 1, 0}));
    EXPECT_NE(ds.sensitive[0], ds.sensitive[2]);
    for (const auto& name : ds.feature_names) {
        EXPECT_EQ(name.rfind("sex", 0), std::string::npos);
        EXPECT_EQ(name.rfind("income", 0), std::string::npos);
    }
}

TEST(Split, RatioOnTwoHundredRows) {
    SyntheticSpec s;
    s.m = 200;
    const auto sp = split(generate_synthetic(s), 3);
    EXPECT_EQ(sp.train.rows(), 175u);
    EXPECT_EQ(sp.test.rows(), 25u);
}

TEST(Split, ProportionsWithinOneRow) {
    for (std::size_t m : {57u, 123u, 999u, 1601u}) {
        SyntheticSpec s;
        s.m = m;
        s.seed = m;
        const auto sp = split(generate_synthetic(s), 1);
        EXPECT_NEAR(static_cast<double>(sp.test.rows()), 0.125 * m, 1.0) << "m=" << m;
        EXPECT_EQ(sp.train.rows() + sp.test.rows(), m);
    }
}

TEST(Split, SameSeedSameSplit) {
    SyntheticSpec s;
    s.m = 300;
    const TabularDataset ds = generate_synthetic(s);
    const auto a = split(ds, 9), b = split(ds, 9), c = split(ds, 10);
    EXPECT_EQ(a.train_rows, b.train_rows);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(a.train_rows, c.train_rows);
}

TEST(Split, EveryCellInBothPartitions) {
    // Four (label, domain) cells of 10 rows each.
    TabularDataset ds;
    ds.features = Tensor(40, 1);
    for (int i = 0; i < 40; ++i) {
        ds.features(i, 0) = i;
        ds.task_labels.push_back(i % 2);
        ds.sensitive.push_back((i / 2) % 2);
    }
    ds.continuous = {1};
    ds.feature_names = {"x"};
    ds.class_names = {"0", "1"};
    ds.domain_names = {"a", "b"};
    ds.columns = {ColumnMeta{"x", ColumnKind::continuous, {}, 0, 1}};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto sp = split(ds, seed);
        std::set<std::pair<int, int>> tr, te;
        for (std::size_t i = 0; i < sp.train.rows(); ++i) tr.insert({sp.train.task_labels[i], sp.train.sensitive[i]});
        for (std::size_t i = 0; i < sp.test.rows(); ++i) te.insert({sp.test.task_labels[i], sp.test.sensitive[i]});
        EXPECT_EQ(tr.size(), 4u);
        EXPECT_EQ(te.size(), 4u);
    }
}

TEST(Split, NormalizationUsesTrainStatisticsOnly) {
    SyntheticSpec s;
    s.m = 400;
    const TabularDataset ds = generate_synthetic(s);
    const auto sp = split(ds, 2);
    ASSERT_TRUE(sp.train.normalization);
    TabularDataset raw_train = ds.subset(sp.train_rows);
    EXPECT_EQ(fit_normalization(raw_train), *sp.train.normalization);
    TabularDataset raw_test = ds.subset(sp.test_rows);
    apply_normalization(raw_test, *sp.train.normalization);
    EXPECT_EQ(raw_test.features, sp.test.features);
}

TEST(Synthetic, SeedDeterminism) {
    SyntheticSpec s;
    s.seed = 42;
    EXPECT_EQ(generate_synthetic(s), generate_synthetic(s));
    SyntheticSpec t = s;
    t.seed = 43;
    EXPECT_NE(generate_synthetic(s).features, generate_synthetic(t).features);
}

TEST(Synthetic, NoBiasMeansIndependentLabels) {
    SyntheticSpec s;
    s.m = 10000;
    s.bias_strength = 0.0;
    s.n_domains = 3;
    s.seed = 5;
    const TabularDataset ds = generate_synthetic(s);
    double obs[2][3] = {};
    for (std::size_t i = 0; i < ds.rows(); ++i) obs[ds.task_labels[i]][ds.sensitive[i]] += 1;
    double rows[2] = {}, cols[3] = {};
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 3; ++d) {
            rows[c] += obs[c][d];
            cols[d] += obs[c][d];
        }
    double chi2 = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 3; ++d) {
            const double e = rows[c] * cols[d] / ds.rows();
            chi2 += (obs[c][d] - e) * (obs[c][d] - e) / e;
        }
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(2), chi2));
    EXPECT_GT(p, 0.01);
}

TEST(Synthetic, FullBiasMakesLabelAFunctionOfDomain) {
    SyntheticSpec s;
    s.m = 10000;
    s.bias_strength = 1.0;
    s.seed = 6;
    const TabularDataset ds = generate_synthetic(s);
    // Best label-from-domain predictor: majority label of each domain.
    std::map<int, std::map<int, int>> counts;
    for (std::size_t i = 0; i < ds.rows(); ++i) ++counts[ds.sensitive[i]][ds.task_labels[i]];
    std::vector<int> pred(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        const auto& c = counts[ds.sensitive[i]];
        pred[i] = std::max_element(c.begin(), c.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    }
    EXPECT_GT(balanced_accuracy(pred, ds.task_labels, ds.n_classes), 0.9);
}

TEST(Synthetic, ClassWeightsSetPrior) {
    SyntheticSpec s;
    s.m = 20000;
    s.bias_strength = 0.0;
    s.class_weights = {0.85, 0.15};
    const TabularDataset ds = generate_synthetic(s);
    double pos = 0;
    for (int y : ds.task_labels) pos += y;
    EXPECT_NEAR(pos / ds.rows(), 0.15, 0.01);
}

TEST(Synthetic, InvalidSpecRejected) {
    SyntheticSpec s;
    s.bias_strength = 1.5;
    EXPECT_THROW(s.validate(), ConfigError);
    s = SyntheticSpec{};
    s.class_weights = {1.0};
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Cache, RoundTripIsExact) {
    const TabularDataset ds = parse_fixture();
    EXPECT_EQ(dataset_from_json(dataset_to_json(ds)), ds);
    const auto path = std::filesystem::temp_directory_path() / "dap_test_cache.json";
    SyntheticSpec s;
    s.m = 100;
    const auto sp = split(generate_synthetic(s), 0);
    save_dataset(path, sp.train);
    EXPECT_EQ(load_dataset(path), sp.train);
    std::filesystem::remove(path);
}

TEST(Cache, MissingFileIsIoError) {
    EXPECT_THROW(load_dataset("/nonexistent/dir/x.json"), IoError);
}

TEST(Fingerprint, SensitiveToContent) {
    TabularDataset a = parse_fixture();
    TabularDataset b = a;
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    EXPECT_EQ(fingerprint(a).size(), 16u);
    b.task_labels[0] ^= 1;
    EXPECT_NE(fingerprint(a), fingerprint(b));
}
