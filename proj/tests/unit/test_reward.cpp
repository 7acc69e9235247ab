#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "agentforge/reward.hpp"
#include "agentforge/serialize.hpp"
#include "test_support.hpp"

using namespace agentforge;
using testsupport::rule;

namespace {

struct JudgeRig {
    std::shared_ptr<StubBackend> stub;
    Gateway gateway;
    Judge judge;

    explicit JudgeRig(std::vector<json> rules, JudgeConfig cfg = {})
        : stub(testsupport::make_stub(rules)), gateway(stub, testsupport::fast_options()), judge(gateway, cfg) {}
    JudgeRig(std::initializer_list<json> rules) : JudgeRig(std::vector<json>(rules)) {}
};

/// 4 of 7 subgoals, 3 of 5 interactions; the forbidden check passes only when
/// the transcript shows the duration was confirmed.
std::vector<json> newsletter_judge() {
    return {rule({R"(\[judge:forbidden\])", "85 seconds"}, {"CLEAN"}),
            rule({R"(\[judge:forbidden\])"}, {"VIOLATED"}),
            rule({R"(\[judge:subgoals\])"},
                 {"1 SATISFIED\n2 SATISFIED\n3 UNSATISFIED\n4 SATISFIED\n5 UNSATISFIED\n6 SATISFIED\n7 UNSATISFIED"}),
            rule({R"(\[judge:interactions\])"}, {"1 SATISFIED\n2 SATISFIED\n3 UNSATISFIED\n4 SATISFIED\n5 UNSATISFIED"})};
}

/// Independent count: lines whose verdict word is exactly SATISFIED.
std::int64_t count_satisfied(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::int64_t n = 0;
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string index, verdict;
        if (words >> index >> verdict && verdict == "SATISFIED") ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("item verdict parsing") {
    auto v = parse_item_verdicts("1. SATISFIED\n2) unsatisfied\n3: Satisfied\n3 UNSATISFIED\n9 SATISFIED\nnoise", 4,
                                 "SATISFIED", "UNSATISFIED");
    REQUIRE(v.size() == 4);
    CHECK(v[0] == true);
    CHECK(v[1] == false);
    CHECK(v[2] == true);  // first verdict for an item wins
    CHECK_FALSE(v[3].has_value());
    auto w = parse_item_verdicts("1 SATISFIEDLY\n2 UNSATISFIED because", 2, "SATISFIED", "UNSATISFIED");
    CHECK_FALSE(w[0].has_value());
    CHECK(w[1] == false);
    CHECK(parse_single_verdict("\n  clean\nVIOLATED", "VIOLATED", "CLEAN") == false);
    CHECK_FALSE(parse_single_verdict("maybe", "VIOLATED", "CLEAN").has_value());
    CHECK(number_items({"a", "b"}) == "1. a\n2. b\n");
}

TEST_CASE("newsletter fixture: 4/7 and 3/5 with a clean gate gives exactly 41/70") {
    JudgeRig rig(newsletter_judge());
    auto trajectory = testsupport::newsletter_trajectory();
    auto rubric = testsupport::newsletter_rubric();
    REQUIRE(rubric.subgoals.size() == 7);
    REQUIRE(rubric.required_interactions.size() == 5);
    REQUIRE(rubric.forbidden.size() == 1);
    JudgeLog log;
    auto report = rig.judge.compute_reward(trajectory, rubric, &log);
    CHECK(report.gate == 1);
    CHECK(report.subgoals == Fraction{4, 7});
    CHECK(report.interactions == Fraction{3, 5});
    CHECK(report.reward_exact == Rational{41, 70});

    // Oracle: recount from the logged judge replies with plain integers.
    std::int64_t s = 0, i = 0;
    bool clean = true;
    for (const auto& c : log.take()) {
        if (c.kind == "subgoals") s = count_satisfied(c.response);
        if (c.kind == "interactions") i = count_satisfied(c.response);
        if (c.kind == "forbidden") clean = clean && c.response == "CLEAN";
    }
    const std::int64_t num = (clean ? 1 : 0) * (s * 5 + i * 7);
    const std::int64_t den = 2 * 7 * 5;
    const auto g = std::gcd(num, den);
    CHECK(report.reward_exact == Rational{num / g, den / g});
}

TEST_CASE("newsletter fixture: transcribing without confirming duration zeroes the reward") {
    JudgeRig rig(newsletter_judge());
    auto report = rig.judge.compute_reward(testsupport::newsletter_trajectory(true), testsupport::newsletter_rubric());
    CHECK(report.gate == 0);
    CHECK(report.reward_exact == Rational{0, 1});
    CHECK(report.reward == 0.0);
    // Sub-scores are still reported for diagnostics.
    CHECK(report.subgoals == Fraction{4, 7});
}

TEST_CASE("forbidden checks: one call per constraint, early exit, unparseable counts as clean") {
    auto trajectory = testsupport::newsletter_trajectory();
    auto rubric = testsupport::newsletter_rubric();
    rubric.forbidden = {{"rule A"}, {"rule B"}, {"rule C"}};
    SUBCASE("second violated") {
        JudgeRig rig({rule({"rule B"}, {"VIOLATED"}), rule({R"(\[judge:forbidden\])"}, {"CLEAN"})});
        CHECK(rig.judge.judge_forbidden(trajectory, rubric) == 0);
        CHECK(rig.stub->calls() == 2);
    }
    SUBCASE("garbage is retried then treated as clean") {
        JudgeRig rig({rule({R"(\[judge:forbidden\])"}, {"hmm"})});
        JudgeLog log;
        CHECK(rig.judge.judge_forbidden(trajectory, rubric, &log) == 1);
        CHECK(rig.stub->calls() == 9);
        auto calls = log.take();
        CHECK(calls.size() == 9);
        CHECK(calls[4].item == 1);
        CHECK(calls[4].attempt == 1);
    }
}

TEST_CASE("checklists: retries only when nothing parses; missing lines are unsatisfied") {
    auto trajectory = testsupport::newsletter_trajectory();
    auto rubric = testsupport::newsletter_rubric();
    SUBCASE("partial output") {
        JudgeRig rig({rule({R"(\[judge:subgoals\])"}, {"1 SATISFIED\n2 SATISFIED"})});
        CHECK(rig.judge.score_subgoals(trajectory, rubric) == Fraction{2, 7});
        CHECK(rig.stub->calls() == 1);
    }
    SUBCASE("garbage then valid") {
        JudgeRig rig({rule({R"(\[judge:interactions\])"}, {"I cannot", "1 SATISFIED\n5 SATISFIED"})});
        CHECK(rig.judge.score_interactions(trajectory, rubric) == Fraction{2, 5});
        CHECK(rig.stub->calls() == 2);
    }
    SUBCASE("empty checklist needs no call") {
        JudgeRig rig(std::vector<json>{});
        rubric.required_interactions.clear();
        CHECK(rig.judge.score_interactions(trajectory, rubric) == Fraction{0, 0});
    }
    SUBCASE("mismatched task") {
        JudgeRig rig(newsletter_judge());
        rubric.task_id = "other";
        CHECK_THROWS_AS(rig.judge.compute_reward(trajectory, rubric), std::invalid_argument);
    }
}

TEST_CASE("reasoning answers") {
    JudgeRig rig({rule({R"(\[judge:reasoning\])", "Candidate answer:\nfour"}, {"EQUIVALENT"}),
                  rule({R"(\[judge:reasoning\])", "Candidate answer:\nfive"}, {"DIFFERENT"}),
                  rule({R"(\[judge:reasoning\])"}, {"unsure"})});
    CHECK(rig.judge.score_reasoning(" 4.0 ", "4", ReasoningMode::Exact) == 1);
    CHECK(rig.judge.score_reasoning("5", "4", ReasoningMode::Exact) == 0);
    CHECK(rig.judge.score_reasoning("four", "4", ReasoningMode::Judge) == 1);
    CHECK(rig.judge.score_reasoning("five", "4", ReasoningMode::Judge) == 0);
    CHECK(rig.judge.score_reasoning("??", "4", ReasoningMode::Judge) == 0);
    CHECK_THROWS_AS(rig.judge.score_reasoning("4", " ", ReasoningMode::Exact), std::invalid_argument);
}

TEST_CASE("property: reward is monotone in satisfied items and zero when gated") {
    std::mt19937_64 rng(99);
    for (int n = 0; n < 2000; ++n) {
        const std::int64_t st = 1 + rng() % 10, it = rng() % 8;
        const std::int64_t s = rng() % (st + 1), i = it == 0 ? 0 : rng() % (it + 1);
        auto base = make_reward_report(1, {s, st}, {i, it});
        CHECK(base.reward >= 0.0);
        CHECK(base.reward <= 1.0);
        if (s < st) CHECK(make_reward_report(1, {s + 1, st}, {i, it}).reward_exact.value() > base.reward);
        if (i < it) CHECK(make_reward_report(1, {s, st}, {i + 1, it}).reward_exact.value() > base.reward);
        CHECK(make_reward_report(0, {s, st}, {i, it}).reward_exact == Rational{0, 1});
        // Exact value against double arithmetic.
        const double expect = (static_cast<double>(s) / st + (it == 0 ? 1.0 : static_cast<double>(i) / it)) / 2.0;
        CHECK(base.reward == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("variance: hand-computed example") {
    auto v = compute_variance("t", {{1.0, 0.0}, {0.5, 0.5}, {0.0, 0.0}});
    CHECK(v.trajectories == 2);
    CHECK(v.repeat_means == std::vector<double>{0.5, 0.5, 0.0});
    CHECK(v.mean == doctest::Approx(1.0 / 3.0));
    CHECK(v.variance == doctest::Approx(((1.0 / 6) * (1.0 / 6) * 2 + (1.0 / 3) * (1.0 / 3)) / 3.0));
    CHECK(compute_variance("t", {}).variance == 0.0);
}

namespace {

std::vector<Trajectory> several_trajectories() {
    std::vector<Trajectory> out;
    auto good = testsupport::newsletter_trajectory();
    auto bad = testsupport::newsletter_trajectory(true);
    good.id = "good";
    bad.id = "bad";
    out.push_back(good);
    out.push_back(bad);
    auto stranger = good;
    stranger.id = "stranger";
    stranger.task_id = "no-such-task";
    out.push_back(stranger);
    return out;
}

}  // namespace

TEST_CASE("judge batch: deterministic judge has zero variance; parallel equals serial") {
    auto rubric = testsupport::newsletter_rubric();
    std::map<std::string, Rubric> rubrics{{rubric.task_id, rubric}};
    JudgeRig serial_rig(newsletter_judge());
    JudgeRig parallel_rig(newsletter_judge());
    auto serial = judge_batch_serial(serial_rig.judge, several_trajectories(), rubrics, 6);
    auto parallel = judge_batch(parallel_rig.judge, several_trajectories(), rubrics, 6, 4);
    CHECK(serial == parallel);
    REQUIRE(serial.records.size() == 12);
    CHECK(serial.records[0].trajectory_id == "good");
    CHECK(serial.records[5].repeat == 5);
    CHECK(serial.records[6].trajectory_id == "bad");
    CHECK(serial.missing_rubrics == std::vector<std::string>{"no-such-task"});
    REQUIRE(serial.variance.size() == 1);
    CHECK(serial.variance[0].variance == 0.0);
    CHECK(serial.variance[0].mean == doctest::Approx(41.0 / 140.0));
    CHECK_THROWS_AS(judge_batch_serial(serial_rig.judge, several_trajectories(), rubrics, 0), std::invalid_argument);
}

TEST_CASE("judge batch: stochastic judge variance is reproducible from the persisted transcripts") {
    auto rubric = testsupport::newsletter_rubric();
    std::map<std::string, Rubric> rubrics{{rubric.task_id, rubric}};
    auto sub = rule({R"(\[judge:subgoals\])"},
                    {"1 SATISFIED\n2 SATISFIED\n3 SATISFIED\n4 SATISFIED\n5 SATISFIED\n6 SATISFIED\n7 SATISFIED",
                     "1 SATISFIED\n2 UNSATISFIED\n3 SATISFIED\n4 UNSATISFIED\n5 SATISFIED\n6 UNSATISFIED\n7 UNSATISFIED",
                     "1 UNSATISFIED\n2 UNSATISFIED\n3 UNSATISFIED\n4 SATISFIED\n5 UNSATISFIED\n6 UNSATISFIED\n7 UNSATISFIED"},
                    "random");
    sub["seed"] = 5;
    auto inter = rule({R"(\[judge:interactions\])"},
                      {"1 SATISFIED\n2 SATISFIED\n3 SATISFIED\n4 SATISFIED\n5 SATISFIED", "1 SATISFIED\n2 UNSATISFIED",
                       "3 SATISFIED"},
                      "random");
    inter["seed"] = 6;
    JudgeRig rig({rule({R"(\[judge:forbidden\])"}, {"CLEAN"}), sub, inter});
    auto trajectories = several_trajectories();
    trajectories.pop_back();
    auto result = judge_batch(rig.judge, trajectories, rubrics, 6, 3);

    // Persist, reload, and recompute every reward and the variance by hand.
    std::string persisted = serialize_lines(result.records);
    auto reloaded = deserialize_lines<JudgeRecord>(persisted);
    std::vector<double> sums(6, 0.0);
    for (const auto& rec : reloaded) {
        std::int64_t s = -1, i = -1;
        for (const auto& c : rec.calls) {
            if (c.kind == "subgoals") s = count_satisfied(c.response);
            if (c.kind == "interactions") i = count_satisfied(c.response);
        }
        REQUIRE(s >= 0);
        REQUIRE(i >= 0);
        const double reward = (static_cast<double>(s) / 7.0 + static_cast<double>(i) / 5.0) / 2.0;
        CHECK(reward == doctest::Approx(rec.report.reward).epsilon(1e-12));
        sums[static_cast<std::size_t>(rec.repeat)] += reward;
    }
    double mean = 0.0;
    for (auto& m : sums) mean += (m /= 2.0);
    mean /= 6.0;
    double var = 0.0;
    for (double m : sums) var += (m - mean) * (m - mean);
    var /= 6.0;
    REQUIRE(result.variance.size() == 1);
    CHECK(std::abs(result.variance[0].variance - var) <= 1e-12);
    CHECK(result.variance[0].variance > 0.0);
}
