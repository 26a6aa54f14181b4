#include "combolab/data/batching.hpp"
#include "combolab/data/corpus.hpp"
#include "combolab/data/tokenizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace combolab::data;

namespace {

std::vector<std::string> sample_docs(std::size_t n, std::size_t len = 40) {
    std::vector<std::string> docs;
    const std::string alphabet = "abcdefghij klmnop.";
    for (std::size_t d = 0; d < n; ++d) {
        std::string doc;
        for (std::size_t i = 0; i < len; ++i) doc += alphabet[(d * 7 + i * 3 + i * i) % alphabet.size()];
        docs.push_back(doc);
    }
    return docs;
}

Tokenizer tokenizer_for(const std::vector<std::string>& docs) { return Tokenizer::char_level(docs); }

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("combolab_data_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Tokenizer, CharRoundTripAndSpecials) {
    const std::vector<std::string> texts{"héllo wörld", "abc"};
    Tokenizer tok = Tokenizer::char_level(texts);
    EXPECT_EQ(tok.tokens()[kPad], "[PAD]");
    EXPECT_EQ(tok.tokens()[kUnk], "[UNK]");
    for (const auto& t : texts) {
        auto ids = tok.encode(t);
        for (int id : ids) EXPECT_FALSE(Tokenizer::is_special(id));
        EXPECT_EQ(tok.decode(ids), t);
    }
    EXPECT_EQ(tok.encode("z"), std::vector<int>{kUnk});
    const std::set<std::string> distinct{"h", "é", "l", "o", " ", "w", "ö", "r", "d", "a", "b", "c"};
    EXPECT_EQ(tok.size(), 6u + distinct.size());
}

TEST(Tokenizer, ByteAndWordModes) {
    Tokenizer bytes = Tokenizer::byte_level();
    EXPECT_EQ(bytes.size(), 262u);
    std::string raw("\x00\xff zq", 5);
    EXPECT_EQ(bytes.decode(bytes.encode(raw)), raw);

    Tokenizer words = Tokenizer::word_list({"the", "cat", "sat"});
    EXPECT_EQ(words.encode("the cat  sat"), (std::vector<int>{6, 7, 8}));
    EXPECT_EQ(words.decode(words.encode("the cat sat")), "the cat sat");
    EXPECT_EQ(words.encode("the dog"), (std::vector<int>{6, kUnk}));
    EXPECT_THROW(Tokenizer::word_list({"two words"}), std::invalid_argument);
}

TEST(Tokenizer, JsonRoundTrip) {
    for (const Tokenizer& tok : {Tokenizer::char_level(std::vector<std::string>{"xyz\n\"q"}), Tokenizer::byte_level(),
                                 Tokenizer::word_list({"a", "b"})}) {
        EXPECT_EQ(Tokenizer::from_json(tok.to_json()), tok);
    }
}

TEST(Masking, CountRule) {
    EXPECT_EQ(masked_count(20), 3u);
    EXPECT_EQ(masked_count(1), 1u);
    EXPECT_EQ(masked_count(3), 1u);
    EXPECT_EQ(masked_count(10), 2u);  // 1.5 rounds up
    EXPECT_EQ(masked_count(30), 5u);  // 4.5 rounds up
}

TEST(Masking, TwentyTokenRowGetsThree) {
    std::vector<std::string> docs{std::string(19, 'a')};
    Tokenizer tok = tokenizer_for(docs);
    MaskedBatch b = make_mlm_batch(docs, tok, 20, 1, 7);
    EXPECT_EQ(b.input_ids.size(), 20u);
    EXPECT_EQ(b.input_ids[0], kCls);
    // 19 ordinary tokens after [CLS].
    EXPECT_EQ(b.target_count(), masked_count(19));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::vector<int> ids(20, 6), targets(20);
        std::vector<std::uint8_t> sel(20);
        mask_row(ids, targets, sel, tok.size(), seed, 0, 0);
        EXPECT_EQ(std::accumulate(sel.begin(), sel.end(), 0), 3);
    }
}

TEST(Masking, SpecialsNeverSelectedAndTargetsMatchMask) {
    auto docs = sample_docs(30);
    Tokenizer tok = tokenizer_for(docs);
    Dataset ds(Objective::MaskedLm, docs, tok, 24);
    for (std::uint64_t step = 0; step < 20; ++step) {
        MaskedBatch b = ds.train_batch(step, 8, 3);
        for (std::size_t i = 0; i < b.input_ids.size(); ++i) {
            EXPECT_EQ(b.mask_positions[i] != 0, b.targets[i] != kIgnore);
            if (b.targets[i] != kIgnore) {
                EXPECT_FALSE(Tokenizer::is_special(b.targets[i]));
            } else {
                EXPECT_NE(b.input_ids[i], kMask);
            }
        }
    }
}

TEST(Masking, ReplacementFractionsWithinBinomialBounds) {
    const std::size_t vocab = 40;
    std::size_t selected = 0, masked = 0, random = 0, kept = 0;
    for (std::uint64_t row = 0; selected < 100000; ++row) {
        std::vector<int> ids(100), targets(100);
        for (std::size_t i = 0; i < 100; ++i) ids[i] = 6 + static_cast<int>(i % 34);
        std::vector<int> original = ids;
        std::vector<std::uint8_t> sel(100);
        mask_row(ids, targets, sel, vocab, 99, 0, row);
        for (std::size_t i = 0; i < 100; ++i) {
            if (!sel[i]) continue;
            ++selected;
            if (ids[i] == kMask) {
                ++masked;
            } else if (ids[i] == original[i]) {
                ++kept;
            } else {
                ++random;
            }
        }
    }
    auto within = [&](std::size_t count, double p) {
        const double n = static_cast<double>(selected);
        return std::abs(static_cast<double>(count) - n * p) <= 3.0 * std::sqrt(n * p * (1 - p));
    };
    EXPECT_TRUE(within(masked, 0.8)) << masked << "/" << selected;
    // A random replacement can coincide with the original token (1 in 34).
    EXPECT_TRUE(within(kept, 0.1 + 0.1 / 34.0)) << kept;
    EXPECT_TRUE(within(random, 0.1 - 0.1 / 34.0)) << random;
}

TEST(Masking, OverallFractionConverges) {
    auto docs = sample_docs(200, 60);
    Tokenizer tok = tokenizer_for(docs);
    Dataset ds(Objective::MaskedLm, docs, tok, 64);
    std::size_t eligible = 0, chosen = 0;
    for (const auto& b : ds.eval_batches(32, 5)) {
        chosen += b.target_count();
        for (std::size_t i = 0; i < b.input_ids.size(); ++i) {
            if (b.targets[i] != kIgnore || !Tokenizer::is_special(b.input_ids[i])) ++eligible;
        }
    }
    EXPECT_NEAR(static_cast<double>(chosen) / static_cast<double>(eligible), 0.15, 0.01);
}

TEST(Masking, EpochsRemask) {
    auto docs = sample_docs(100, 80);
    Tokenizer tok = tokenizer_for(docs);
    Dataset ds(Objective::MaskedLm, docs, tok, 64);
    ASSERT_GE(ds.rows(), 100u);
    std::size_t differ = 0;
    for (std::size_t r = 0; r < 100; ++r) {
        std::vector<std::size_t> id{r};
        differ += ds.batch(id, 1, 0).mask_positions != ds.batch(id, 2, 0).mask_positions;
        EXPECT_EQ(ds.batch(id, 1, 0).input_ids, ds.batch(id, 1, 0).input_ids);
    }
    EXPECT_GE(differ, 99u);
}

TEST(Masking, EmptyBatchRejected) {
    auto docs = sample_docs(2);
    Tokenizer tok = tokenizer_for(docs);
    EXPECT_THROW(make_mlm_batch(docs, tok, 16, 0, 1), std::invalid_argument);
    EXPECT_THROW(make_mlm_batch({}, tok, 16, 1, 1), std::invalid_argument);
}

TEST(LmBatch, SingleDocument) {
    std::vector<std::string> docs{"abc"};
    Tokenizer tok = tokenizer_for(docs);
    MaskedBatch b = make_lm_batch(docs, tok, 4, 1);
    auto abc = tok.encode("abc");
    EXPECT_EQ(b.input_ids, (std::vector<int>{kBos, abc[0], abc[1], abc[2]}));
    EXPECT_EQ(b.targets, (std::vector<int>{abc[0], abc[1], abc[2], kIgnore}));
}

TEST(LmBatch, PackingKeepsOrderWithBosBetweenDocs) {
    std::vector<std::string> docs{"ab", "cd"};
    Tokenizer tok = tokenizer_for(docs);
    MaskedBatch b = make_lm_batch(docs, tok, 3, 2);
    auto ids = tok.encode("abcd");
    EXPECT_EQ(b.input_ids, (std::vector<int>{kBos, ids[0], ids[1], kBos, ids[2], ids[3]}));
    EXPECT_EQ(b.targets, (std::vector<int>{ids[0], ids[1], kIgnore, ids[2], ids[3], kIgnore}));
}

TEST(LmBatch, TokenConservationAndNoSpecialTargets) {
    auto docs = sample_docs(37, 23);
    docs[5] = "x";
    Tokenizer tok = tokenizer_for(docs);
    Dataset ds(Objective::CausalLm, docs, tok, 16);
    std::size_t doc_tokens = 0;
    for (const auto& d : docs) doc_tokens += tok.encode(d).size();
    EXPECT_EQ(ds.token_count(), doc_tokens + docs.size());
    for (const auto& b : ds.eval_batches(4, 0)) {
        for (int t : b.targets) EXPECT_TRUE(t == kIgnore || !Tokenizer::is_special(t));
    }
}

TEST(TrainBatches, PureFunctionOfSeedAndStep) {
    auto docs = sample_docs(20);
    Tokenizer tok = tokenizer_for(docs);
    Dataset ds(Objective::MaskedLm, docs, tok, 16);
    MaskedBatch a = ds.train_batch(13, 5, 4), b = ds.train_batch(13, 5, 4);
    EXPECT_EQ(a.input_ids, b.input_ids);
    EXPECT_EQ(a.targets, b.targets);
    EXPECT_NE(ds.train_batch(13, 5, 5).input_ids, a.input_ids);

    // One epoch visits every row exactly once.
    Dataset lm(Objective::CausalLm, docs, tok, 8);
    std::multiset<std::vector<int>> seen, all;
    for (std::size_t r = 0; r < lm.rows(); ++r) all.insert(lm.row(r));
    for (std::size_t i = 0; i < lm.rows(); ++i) {
        MaskedBatch one = lm.train_batch(i, 1, 9);
        seen.insert(one.input_ids);
    }
    EXPECT_EQ(seen, all);
}

TEST(Split, TrainDevOodCounts) {
    DomainDocs raw{{"A", sample_docs(100)}, {"B", sample_docs(17)}};
    Corpus c = split_domains(raw, {"A"}, 0.1, {"B"}, 3);
    EXPECT_EQ(c.train.at("A").size(), 90u);
    EXPECT_EQ(c.dev.at("A").size(), 10u);
    EXPECT_EQ(c.ood.at("B").size(), 17u);
    Corpus again = split_domains(raw, {"A"}, 0.1, {"B"}, 3);
    EXPECT_EQ(again.train, c.train);
    EXPECT_EQ(again.dev, c.dev);
    EXPECT_NE(split_domains(raw, {"A"}, 0.1, {"B"}, 4).dev, c.dev);

    Corpus no_ood = split_domains(raw, {"A"}, 0.1, {}, 3);
    EXPECT_TRUE(no_ood.ood_names().empty());
    EXPECT_THROW(split_domains(raw, {"A"}, 0.1, {"A"}, 3), std::invalid_argument);
    EXPECT_THROW(split_domains(raw, {"C"}, 0.1, {}, 3), std::invalid_argument);
}

TEST(Split, DocumentsSeparatedByBlankLines) {
    auto docs = split_documents("one\ntwo\n\n\nthree\n  \nfour\r\n");
    EXPECT_EQ(docs, (std::vector<std::string>{"one\ntwo", "three", "four"}));
}

TEST(Manifest, LoadsRelativePathsAndRejectsBadLines) {
    auto dir = temp_dir("manifest");
    std::ofstream(dir / "a.txt") << "doc one\n\ndoc two\n\ndoc three\n";
    std::ofstream(dir / "b.txt") << "x=1\n\ny=2\n";
    std::ofstream(dir / "manifest.txt") << "# toy\nprose train a.txt\nrecords ood b.txt  # structured\n";
    Corpus c = load_corpus(dir / "manifest.txt", 0.34, 1);
    EXPECT_EQ(c.train.at("prose").size() + c.dev.at("prose").size(), 3u);
    EXPECT_EQ(c.dev.at("prose").size(), 1u);
    EXPECT_EQ(c.ood_names(), std::vector<std::string>{"records"});

    std::ofstream(dir / "bad.txt") << "prose train\n";
    try {
        read_manifest(dir / "bad.txt");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("bad.txt:1"), std::string::npos);
    }
    std::ofstream(dir / "missing.txt") << "prose train nope.txt\n";
    EXPECT_THROW(load_corpus(dir / "missing.txt", 0.1, 1), std::runtime_error);
}
