#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mpcl/data/cipher.hpp"
#include "mpcl/training.hpp"
#include "support/data_check.hpp"

using namespace mpcl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("mpcl_train_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig small_config() {
    TrainConfig c;
    c.batch_size = 8;
    c.hash_bits = 10;
    c.dim = 16;
    c.k_positives = 3;
    c.epochs = 2;
    c.warmup_steps = 4;
    c.lr_warmup = 1e-2;
    c.lr_main = 1e-3;
    c.seed = 7;
    return c;
}

std::vector<SentenceGroup> small_groups(std::size_t n = 40) { return check::full_groups(n, 5); }

std::vector<TrainLogRecord> run_logged(const TrainConfig& cfg, const std::vector<SentenceGroup>& groups,
                                       TrainOptions opt = {}) {
    std::vector<TrainLogRecord> log;
    opt.log = [&](const TrainLogRecord& r) { log.push_back(r); };
    train(cfg, groups, opt);
    return log;
}

}  // namespace

TEST(Schedule, DefaultExamples) {
    const TrainConfig cfg;
    const auto s0 = schedule(0, cfg);
    EXPECT_EQ(s0.phase, Phase::warmup);
    EXPECT_EQ(s0.objective, Objective::single);
    EXPECT_EQ(s0.lr, 2e-5);
    const auto s1999 = schedule(1999, cfg);
    EXPECT_EQ(s1999.phase, Phase::warmup);
    const auto s2000 = schedule(2000, cfg);
    EXPECT_EQ(s2000.phase, Phase::main);
    EXPECT_EQ(s2000.objective, Objective::multi);
    EXPECT_EQ(s2000.lr, 1e-5);
}

TEST(Schedule, WarmupDisabledStartsInMainPhase) {
    TrainConfig cfg;
    cfg.warmup_enabled = false;
    const auto s = schedule(0, cfg);
    EXPECT_EQ(s.phase, Phase::main);
    EXPECT_EQ(s.objective, Objective::multi);
    EXPECT_EQ(s.lr, 1e-5);
}

TEST(Schedule, SingleObjectiveStaysSingle) {
    TrainConfig cfg;
    cfg.objective = Objective::single;
    EXPECT_EQ(schedule(5000, cfg).objective, Objective::single);
    EXPECT_EQ(schedule(5000, cfg).phase, Phase::main);
}

TEST(InitParams, DeterministicOpenRangeIdentityProjection) {
    const auto cfg = small_config();
    const auto a = init_params(cfg, 3);
    EXPECT_EQ(a, init_params(cfg, 3));
    EXPECT_NE(a.embedding, init_params(cfg, 4).embedding);
    EXPECT_EQ(a.embedding.rows(), 1024u);
    EXPECT_EQ(a.embedding.cols(), 16u);
    for (float v : a.embedding.storage()) {
        EXPECT_GT(v, -0.05f);
        EXPECT_LT(v, 0.05f);
    }
    EXPECT_EQ(a.projection, Matrix<float>::identity(16));
}

TEST(TrainConfigJson, RoundTripAndStrictKeys) {
    auto cfg = small_config();
    cfg.objective = Objective::single;
    cfg.normalization = Normalization::identity;
    cfg.use_hard_negatives = true;
    const auto back = train_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    EXPECT_EQ(to_json(back), to_json(cfg));

    EXPECT_THROW(train_config_from_json(nlohmann::json{{"batchsize", 4}}), InvalidArgument);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"tau", "0.05"}}), InvalidArgument);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", -1}}), InvalidArgument);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"objective", "both"}}), InvalidArgument);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"batch_size", 1}}), InvalidArgument);
    EXPECT_THROW(train_config_from_json(nlohmann::json::array()), InvalidArgument);
}

TEST(TrainConfigJson, MissingKeysKeepBase) {
    const auto base = small_config();
    const auto c = train_config_from_json(nlohmann::json{{"epochs", 9}}, base);
    EXPECT_EQ(c.epochs, 9u);
    EXPECT_EQ(c.batch_size, base.batch_size);
    EXPECT_EQ(c.hash_bits, base.hash_bits);
    EXPECT_EQ(train_config_from_json(nlohmann::json::object()).batch_size, 128u);
}

TEST(TrainConfigJson, FileErrors) {
    const auto dir = temp_dir("cfg");
    std::ofstream(dir / "bad.json") << "{not json";
    EXPECT_THROW(load_train_config(dir / "bad.json"), DataError);
    EXPECT_THROW(load_train_config(dir / "missing.json"), DataError);
    std::ofstream(dir / "ok.json") << R"({"batch_size": 16, "tau": 0.1})";
    const auto c = load_train_config(dir / "ok.json");
    EXPECT_EQ(c.batch_size, 16u);
    EXPECT_EQ(c.tau, 0.1);
}

TEST(Train, ZeroEpochsLeavesParametersUntouched) {
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto result = train(cfg, small_groups());
    EXPECT_EQ(result.steps, 0u);
    EXPECT_TRUE(result.epoch_mean_loss.empty());
    EXPECT_EQ(result.params, init_params(cfg, cfg.seed));
}

TEST(Train, StepCountsFollowBatching) {
    auto cfg = small_config();
    cfg.epochs = 3;
    // 50 groups in batches of 8: six full batches and a tail of 2 that is kept.
    auto log = run_logged(cfg, small_groups(50));
    EXPECT_EQ(log.size(), 21u);
    // 49 groups leave a tail of 1, which is dropped every epoch.
    const auto r = train(cfg, small_groups(49));
    EXPECT_EQ(r.steps, 18u);
    EXPECT_EQ(r.dropped_groups, 3u);
    for (std::size_t i = 0; i < log.size(); ++i) {
        EXPECT_EQ(log[i].step, i);
        EXPECT_EQ(log[i].epoch, i / 7);
    }
}

TEST(Train, PhaseTagsMatchSchedule) {
    auto cfg = small_config();
    cfg.epochs = 3;
    const auto log = run_logged(cfg, small_groups());
    ASSERT_GT(log.size(), cfg.warmup_steps);
    for (const auto& r : log) {
        if (r.phase == Phase::warmup) {
            EXPECT_LT(r.step, cfg.warmup_steps);
            EXPECT_EQ(r.objective, Objective::single);
            EXPECT_EQ(r.lr, cfg.lr_warmup);
        } else {
            EXPECT_GE(r.step, cfg.warmup_steps);
            EXPECT_EQ(r.objective, Objective::multi);
            EXPECT_EQ(r.lr, cfg.lr_main);
        }
        EXPECT_TRUE(std::isfinite(r.loss));
    }

    cfg.objective = Objective::single;
    for (const auto& r : run_logged(cfg, small_groups())) EXPECT_EQ(r.objective, Objective::single);
}

TEST(Train, DeterministicWithIdenticalCheckpoints) {
    const auto cfg = small_config();
    const auto a = temp_dir("det_a"), b = temp_dir("det_b");
    TrainOptions oa, ob;
    oa.checkpoint_dir = a;
    ob.checkpoint_dir = b;
    const auto la = run_logged(cfg, small_groups(), oa);
    const auto lb = run_logged(cfg, small_groups(), ob);
    ASSERT_EQ(la.size(), lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss) << "step " << i;
    for (const auto* name : {"epoch_0.ckpt", "epoch_1.ckpt", "final.ckpt"}) {
        ASSERT_TRUE(fs::exists(a / name)) << name;
        EXPECT_EQ(file_bytes(a / name), file_bytes(b / name)) << name;
    }
    EXPECT_EQ(file_bytes(a / "epoch_1.ckpt"), file_bytes(a / "final.ckpt"));

    auto other = cfg;
    other.seed = 8;
    EXPECT_NE(train(other, small_groups()).params, train(cfg, small_groups()).params);
}

TEST(Train, FinalCheckpointRestoresResult) {
    const auto cfg = small_config();
    const auto dir = temp_dir("final");
    TrainOptions opt;
    opt.checkpoint_dir = dir;
    const auto r = train(cfg, small_groups(), opt);
    const auto ck = load_checkpoint(dir / "final.ckpt");
    EXPECT_EQ(ck.params, r.params);
    EXPECT_EQ(ck.optimizer, r.optimizer);
    EXPECT_EQ(ck.optimizer.step, r.steps);
}

TEST(Train, InitialParametersAreUsed) {
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto init = init_params(cfg, 99);
    TrainOptions opt;
    opt.initial = init;
    EXPECT_EQ(train(cfg, small_groups(), opt).params, init);

    auto wrong = cfg;
    wrong.dim = 8;
    opt.initial = init_params(wrong, 1);
    EXPECT_THROW(train(cfg, small_groups(), opt), InvalidArgument);
}

TEST(Train, LossDecreasesOnCipherCorpus) {
    CipherConfig cc;
    cc.n_concepts = 200;
    cc.alphabet_size = 50;
    cc.n_eval = 10;
    cc.seed = 3;
    const auto groups = gen_cipher_corpus(cc).train_groups();
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.k_positives = 5;
    cfg.epochs = 5;
    // Epoch means are only comparable within one objective, so stay in the main phase.
    cfg.warmup_enabled = false;
    cfg.lr_main = 1e-3;
    const auto r = train(cfg, groups);
    ASSERT_EQ(r.epoch_mean_loss.size(), 5u);
    int plateaus = 0;
    for (std::size_t e = 1; e < 5; ++e) {
        if (!(r.epoch_mean_loss[e] < r.epoch_mean_loss[e - 1])) ++plateaus;
    }
    EXPECT_LE(plateaus, 1);
    EXPECT_LT(r.epoch_mean_loss.back(), r.epoch_mean_loss.front());
}

TEST(Train, HardNegativesAndRedrawnDatasets) {
    auto cfg = small_config();
    cfg.use_hard_negatives = true;
    auto groups = small_groups();
    for (auto& g : groups) g.hard_negatives = {{"l0", "contra " + g.id}};
    for (const auto& r : run_logged(cfg, groups)) EXPECT_TRUE(std::isfinite(r.loss));
    for (auto& g : groups) g.hard_negatives.clear();
    EXPECT_THROW(train(cfg, groups), InvalidArgument);

    cfg.use_hard_negatives = false;
    std::vector<std::size_t> asked;
    TrainOptions opt;
    opt.epoch_dataset = [&](std::size_t e) {
        asked.push_back(e);
        return small_groups(16 + 8 * e);
    };
    const auto r = train(cfg, groups, opt);
    EXPECT_EQ(asked, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(r.steps, 2u + 3u);
}

TEST(Train, ValidatesBeforeRunning) {
    auto cfg = small_config();
    cfg.k_positives = 5;  // groups have 5 languages, so at most 4 positives
    EXPECT_THROW(train(cfg, small_groups()), InvalidArgument);
    cfg = small_config();
    cfg.batch_size = 1;
    EXPECT_THROW(train(cfg, small_groups()), InvalidArgument);
}

TEST(Train, NonFiniteLossReportsContext) {
    auto cfg = small_config();
    cfg.warmup_enabled = false;
    cfg.tau = 1e-200;  // min-max logits reach 1/tau^2, which overflows
    try {
        train(cfg, small_groups());
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("phase main"), std::string::npos) << msg;
        EXPECT_NE(msg.find("objective multi"), std::string::npos) << msg;
    }
}

TEST(Train, JsonlLogFormat) {
    std::ostringstream out;
    auto log = jsonl_log(out);
    log({3, 1, Phase::warmup, Objective::single, 0.5, 1.25, 10.0});
    const auto j = nlohmann::json::parse(out.str());
    EXPECT_EQ(j["step"], 3);
    EXPECT_EQ(j["epoch"], 1);
    EXPECT_EQ(j["phase"], "warmup");
    EXPECT_EQ(j["objective"], "single");
    EXPECT_EQ(j["loss"], 1.25);
    EXPECT_EQ(out.str().back(), '\n');
}
