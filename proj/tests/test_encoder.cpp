#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpcl/checkpoint.hpp"
#include "mpcl/encoder.hpp"
#include "mpcl/optimizer.hpp"
#include "mpcl/tokenizer.hpp"
#include "support/pipeline_check.hpp"

using namespace mpcl;

namespace {

ModelParams<double> small_params(unsigned hash_bits, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams<double> p{hash_bits, dim, Matrix<double>(std::size_t{1} << hash_bits, dim), Matrix<double>::identity(dim)};
    for (double& v : p.embedding.storage()) v = uniform_real(rng, -0.05, 0.05);
    return p;
}

ModelParams<float> small_float_params(unsigned hash_bits, std::size_t dim, std::uint64_t seed) {
    return small_params(hash_bits, dim, seed).cast<float>();
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("mpcl_test_" + name);
}

}  // namespace

TEST(Tokenizer, Examples) {
    const auto a = tokenize("Hello, world", 64);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a, tokenize("Hello, world", 64));
    EXPECT_EQ(a[0], Tokenizer{}.token_id("hello"));
    EXPECT_EQ(tokenize("", 64), TokenIds{0});
    EXPECT_EQ(tokenize(" ,;! ", 64), TokenIds{0});
    const auto rep = tokenize("a a a", 64);
    ASSERT_EQ(rep.size(), 3u);
    EXPECT_EQ(rep[0], rep[1]);
    EXPECT_EQ(rep[1], rep[2]);
}

TEST(Tokenizer, LowercasesAndTruncates) {
    EXPECT_EQ(tokenize("ABC", 8), tokenize("abc", 8));
    EXPECT_EQ(tokenize("one two three four", 2).size(), 2u);
    EXPECT_EQ(tokenize("one two", 2, 4)[0], static_cast<std::uint32_t>(fnv1a64("one") & 15u));
    // Non-ASCII bytes stay inside the word.
    EXPECT_EQ(tokenize("grüße welt", 8).size(), 2u);
    EXPECT_THROW(tokenize("x", 0), InvalidArgument);
}

TEST(Tokenizer, Fnv1aReferenceValues) {
    // Published FNV-1a 64-bit test vectors.
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Encoder, RowsAreUnitNormAndDeterministic) {
    const auto p = small_params(8, 16, 1);
    const std::vector<TokenIds> batch{{1, 2, 3}, {4}, {1, 2, 3}, {200, 7, 7, 9}};
    const auto out = encode(p, std::span<const TokenIds>(batch));
    for (std::size_t r = 0; r < batch.size(); ++r) EXPECT_NEAR(l2_norm(out.embeddings.row(r)), 1.0, 1e-9);
    for (std::size_t t = 0; t < 16; ++t) EXPECT_EQ(out.embeddings(0, t), out.embeddings(2, t));
    EXPECT_EQ(out.embeddings, encode(p, std::span<const TokenIds>(batch)).embeddings);
}

TEST(Encoder, SingleTokenWithIdentityProjectionIsNormalizedRow) {
    const auto p = small_params(6, 8, 2);
    const std::vector<TokenIds> batch{{5}};
    const auto out = encode(p, std::span<const TokenIds>(batch));
    const double n = l2_norm(p.embedding.row(5)) + kNormEpsilon;
    for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR(out.embeddings(0, t), p.embedding(5, t) / n, 1e-12);
}

TEST(Encoder, Errors) {
    const auto p = small_params(4, 4, 3);
    EXPECT_THROW(encode(p, std::span<const TokenIds>()), InvalidArgument);
    const std::vector<TokenIds> empty_sentence{{}};
    EXPECT_THROW(encode(p, std::span<const TokenIds>(empty_sentence)), InvalidArgument);
    const std::vector<TokenIds> out_of_range{{99}};
    EXPECT_THROW(encode(p, std::span<const TokenIds>(out_of_range)), InvalidArgument);
    const std::vector<TokenIds> ok{{1}};
    const auto enc = encode(p, std::span<const TokenIds>(ok));
    EXPECT_THROW(encode_backward(p, enc.cache, Matrix<double>(2, 4)), InvalidArgument);
}

TEST(EncoderBackward, ZeroUpstreamGivesZeroGradients) {
    const auto p = small_params(6, 8, 4);
    const std::vector<TokenIds> batch{{1, 2}, {3}};
    const auto enc = encode(p, std::span<const TokenIds>(batch));
    const auto g = encode_backward(p, enc.cache, Matrix<double>(2, 8));
    EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(EncoderBackward, SharedTokenGradientIsSumOfContributions) {
    const auto p = small_params(6, 8, 5);
    const std::vector<TokenIds> both{{7, 1}, {7, 2, 3}};
    Rng rng(9);
    Matrix<double> upstream(2, 8);
    for (double& v : upstream.storage()) v = uniform_real(rng, -1, 1);
    const auto enc = encode(p, std::span<const TokenIds>(both));
    const auto joint = encode_backward(p, enc.cache, upstream);

    ParamGrads separate(8);
    for (std::size_t s = 0; s < 2; ++s) {
        const std::vector<TokenIds> one{both[s]};
        const auto e = encode(p, std::span<const TokenIds>(one));
        separate.add(encode_backward(p, e.cache, slice_rows(upstream, s, 1)));
    }
    for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR((*joint.find_row(7))[t], (*separate.find_row(7))[t], 1e-15);
}

TEST(EncoderBackward, SingleEntryMatchesFiniteDifference) {
    Rng rng(12);
    auto inst = check::random_pipeline_instance(2, 2, 8, 6, rng);
    const auto grads = check::pipeline_grads(inst);
    const std::uint32_t id = inst.anchors[0][0];
    const double analytic = (*grads.find_row(id))[3];
    const double h = 1e-4;
    const double saved = inst.params.embedding(id, 3);
    inst.params.embedding(id, 3) = saved + h;
    const double up = check::pipeline_loss(inst);
    inst.params.embedding(id, 3) = saved - h;
    const double down = check::pipeline_loss(inst);
    const double fd = (up - down) / (2 * h);
    EXPECT_LT(check::rel_diff(analytic, fd), 1e-4) << analytic << " vs " << fd;
}

TEST(EncoderBackward, FullPipelineGradientCheck) {
    Rng rng(2025);
    for (int trial = 0; trial < 5; ++trial) {
        const auto inst = check::random_pipeline_instance(3, 3, 8, 6, rng);
        EXPECT_LT(check::pipeline_gradient_error(inst), 1e-3);
    }
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
    ModelParams<double> p{1, 1, Matrix<double>(2, 1, 0.5), Matrix<double>(1, 1, 1.0)};
    auto state = OptimizerState<double>::zeros_like(p);
    ParamGrads g(1);
    g.row(0)[0] = 3.0;
    g.projection(0, 0) = -0.25;
    adam_step(p, state, g, 1e-3);
    EXPECT_NEAR(p.embedding(0, 0), 0.5 - 1e-3, 1e-9);
    EXPECT_NEAR(p.projection(0, 0), 1.0 + 1e-3, 1e-9);
    EXPECT_EQ(p.embedding(1, 0), 0.5);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientOnZeroStateIsNoOp) {
    auto p = small_params(4, 4, 6);
    const auto before = p;
    auto state = OptimizerState<double>::zeros_like(p);
    adam_step(p, state, ParamGrads(4), 0.1);
    EXPECT_EQ(p, before);
}

TEST(Adam, SkippingInactiveRowsMatchesDenseUpdate) {
    auto p = small_params(3, 2, 7);
    auto dense = p;
    auto state = OptimizerState<double>::zeros_like(p);
    Matrix<double> m(8, 2), v(8, 2), mp(2, 2), vp(2, 2);
    Rng rng(1);
    for (int step = 1; step <= 5; ++step) {
        ParamGrads g(2);
        Matrix<double> full(8, 2);
        const auto row = static_cast<std::uint32_t>(uniform_index(rng, 8));
        for (std::size_t t = 0; t < 2; ++t) full(row, t) = g.row(row)[t] = uniform_real(rng, -1, 1);
        for (double& x : g.projection.storage()) x = uniform_real(rng, -1, 1);
        adam_step(p, state, g, 0.01);

        const double b1 = 1 - std::pow(0.9, step), b2 = 1 - std::pow(0.999, step);
        auto ref = [&](Matrix<double>& param, Matrix<double>& mm, Matrix<double>& vv, const Matrix<double>& grad) {
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double gi = grad.storage()[i];
                mm.storage()[i] = 0.9 * mm.storage()[i] + (1 - 0.9) * gi;
                vv.storage()[i] = 0.999 * vv.storage()[i] + (1 - 0.999) * gi * gi;
                param.storage()[i] -= 0.01 * (mm.storage()[i] / b1) / (std::sqrt(vv.storage()[i] / b2) + 1e-8);
            }
        };
        ref(dense.embedding, m, v, full);
        ref(dense.projection, mp, vp, g.projection);
    }
    EXPECT_EQ(p, dense);
}

TEST(Adam, RejectsNonFiniteGradients) {
    auto p = small_params(2, 2, 8);
    auto state = OptimizerState<double>::zeros_like(p);
    ParamGrads g(2);
    g.row(1)[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(adam_step(p, state, g, 0.1), NumericError);
    EXPECT_THROW(adam_step(p, state, ParamGrads(2), 0.0), InvalidArgument);
}

TEST(Adam, DeterministicAcrossRuns) {
    auto run = [] {
        auto p = small_float_params(6, 8, 9);
        auto state = OptimizerState<float>::zeros_like(p);
        Rng rng(10);
        for (int s = 0; s < 20; ++s) {
            ParamGrads g(8);
            for (int r = 0; r < 5; ++r) {
                auto row = g.row(static_cast<std::uint32_t>(uniform_index(rng, 64)));
                for (double& x : row) x += uniform_real(rng, -1, 1);
            }
            adam_step(p, state, g, 1e-2);
        }
        return std::pair{p, state};
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_TRUE(a.second == b.second);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    auto p = small_float_params(6, 8, 11);
    auto state = OptimizerState<float>::zeros_like(p);
    ParamGrads g(8);
    g.row(3)[1] = 0.5;
    g.projection(2, 2) = -1.0;
    adam_step(p, state, g, 0.01);

    const auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(p, state, path);
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.params, p);
    EXPECT_TRUE(ck.optimizer == state);
    EXPECT_EQ(ck.optimizer.active_rows, state.active_rows);
    EXPECT_EQ(serialize_checkpoint(ck.params, ck.optimizer), serialize_checkpoint(p, state));
    std::filesystem::remove(path);
}

TEST(Checkpoint, ErrorKinds) {
    const auto p = small_float_params(4, 4, 12);
    const auto state = OptimizerState<float>::zeros_like(p);
    auto bytes = serialize_checkpoint(p, state);

    auto kind_of = [](std::span<const char> b) {
        try {
            deserialize_checkpoint(b);
        } catch (const CheckpointError& e) {
            return e.kind();
        }
        ADD_FAILURE() << "no error";
        return CheckpointError::Kind::io;
    };
    EXPECT_EQ(kind_of(std::span<const char>(bytes).first(bytes.size() / 2)), CheckpointError::Kind::checksum);
    EXPECT_EQ(kind_of(std::span<const char>(bytes).first(6)), CheckpointError::Kind::checksum);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_EQ(kind_of(bad_magic), CheckpointError::Kind::magic);

    auto bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_EQ(kind_of(bad_version), CheckpointError::Kind::version);

    auto flipped = bytes;
    flipped[40] ^= 0x10;
    EXPECT_EQ(kind_of(flipped), CheckpointError::Kind::checksum);

    EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), CheckpointError);
    try {
        load_checkpoint("/nonexistent/dir/x.ckpt");
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
    }
}

TEST(Checkpoint, HeaderLayout) {
    const auto p = small_float_params(5, 3, 13);
    const auto bytes = serialize_checkpoint(p, OptimizerState<float>::zeros_like(p));
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MPCL");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 5);
    EXPECT_EQ(bytes[12], 3);
    const std::size_t floats = 32 * 3 + 9 + 2 * (32 * 3) + 2 * 9;
    EXPECT_EQ(bytes.size(), 4 + 4 * 3 + 8 + 3 * 8 + 4 * floats + 4);
}
