#include "doctest.h"

#include <filesystem>

#include "amber/run_config.hpp"

using namespace amber;
using ojson = nlohmann::ordered_json;

namespace {

const std::filesystem::path kConfigs = AMBER_CONFIG_DIR;

}  // namespace

TEST_CASE("shipped configurations parse") {
    for (const char* name : {"salinas", "indian_pines", "pavia_university", "prisma", "synthetic_toy", "synthetic_cv"}) {
        CAPTURE(name);
        const auto rc = RunConfig::from_json(RunConfig::read_document(kConfigs / (std::string(name) + ".json")));
        CHECK(rc.name == name);
        CHECK(rc.model.bands == rc.bands);
        CHECK(rc.model.n_classes == rc.n_classes);
    }
}

TEST_CASE("dataset configurations use the documented hyperparameters") {
    struct Row {
        const char* name;
        std::int64_t bands, classes, batch, epochs;
        double fraction;
    };
    for (const auto& r : {Row{"salinas", 204, 16, 6, 30, 0.2}, Row{"indian_pines", 200, 16, 3, 50, 0.2},
                          Row{"pavia_university", 103, 9, 10, 30, 0.2}, Row{"prisma", 193, 4, 4, 50, 0.1}}) {
        CAPTURE(r.name);
        const auto rc = RunConfig::from_json(RunConfig::read_document(kConfigs / (std::string(r.name) + ".json")));
        CHECK(rc.bands == r.bands);
        CHECK(rc.n_classes == r.classes);
        CHECK(rc.train.batch_size == r.batch);
        CHECK(rc.train.epochs == r.epochs);
        CHECK(rc.train.learning_rate == 0.01);
        CHECK(rc.train_fraction == r.fraction);
        CHECK(rc.crop == 32);
    }
    const auto prisma = RunConfig::from_json(RunConfig::read_document(kConfigs / "prisma.json"));
    REQUIRE(prisma.rebalance.has_value());
    CHECK(prisma.rebalance->pixels == 700000);
}

TEST_CASE("unknown keys are rejected at every level") {
    auto doc = RunConfig::read_document(kConfigs / "synthetic_toy.json");
    auto top = doc;
    top["epochz"] = 3;
    CHECK_THROWS_AS(RunConfig::from_json(top), ConfigError);
    auto nested = doc;
    nested["train"]["lr"] = 0.1;
    CHECK_THROWS_AS(RunConfig::from_json(nested), ConfigError);
}

TEST_CASE("exactly one data source is required") {
    auto doc = RunConfig::read_document(kConfigs / "synthetic_toy.json");
    auto both = doc;
    both["data"] = ojson{{"cube", "a.hdr.json"}, {"labels", "b.hdr.json"}};
    CHECK_THROWS_AS(RunConfig::from_json(both), ConfigError);
    auto none = doc;
    none.erase("synthetic");
    CHECK_THROWS_AS(RunConfig::from_json(none), ConfigError);
}

TEST_CASE("dotted overrides") {
    auto doc = RunConfig::read_document(kConfigs / "synthetic_toy.json");
    set_config_value(doc, "train.epochs", 2);
    set_config_value(doc, "seed", 99);
    const auto rc = RunConfig::from_json(doc);
    CHECK(rc.train.epochs == 2);
    CHECK(rc.seed == 99);
}
