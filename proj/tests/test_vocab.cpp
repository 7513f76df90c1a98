#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "vpt/vocab.hpp"

using namespace vpt;

TEST_CASE("extend_vocabulary counts and boundaries") {
    const Vocabulary v = extend_vocabulary(256, 8);
    CHECK(v.total_size == 256 + 16 + 2 + 3 + 3);

    const Vocabulary v4 = extend_vocabulary(256, 4);
    int coords = 0;
    for (TokenId t = 0; t < v4.total_size; ++t) {
        const TokenKind k = v4.classify(t).kind;
        if (k == TokenKind::CoordX || k == TokenKind::CoordY) ++coords;
    }
    CHECK(coords == 8);

    const Vocabulary v32 = extend_vocabulary(100, 32);
    CHECK(v32.classify(v32.coord_x(31)) == TokenClass{TokenKind::CoordX, 31});
    CHECK_THROWS_AS(v32.coord_x(32), out_of_range_error);

    CHECK_THROWS_AS(extend_vocabulary(0, 8), std::invalid_argument);
    CHECK_THROWS_AS(extend_vocabulary(256, 1), std::invalid_argument);
}

TEST_CASE("classify is total and deterministic") {
    const Vocabulary a = extend_vocabulary(96, 8);
    const Vocabulary b = extend_vocabulary(96, 8);
    CHECK(a == b);
    CHECK(a.classify(a.region_start).kind == TokenKind::RegionStart);
    CHECK(a.classify(0).kind == TokenKind::Text);
    CHECK(a.classify(a.reenc_control).kind == TokenKind::ReEncControl);
    CHECK(a.classify(a.pad).kind == TokenKind::Pad);
    for (TokenId t = 0; t < a.total_size; ++t) CHECK_NOTHROW(a.classify(t));
    CHECK_THROWS_AS(a.classify(a.total_size), out_of_range_error);
}

TEST_CASE("vocabulary json round trip is exact") {
    const Vocabulary v = extend_vocabulary(96, 16);
    CHECK(vocabulary_from_json(vocabulary_to_json(v)) == v);
}

TEST_CASE("scan_for_group on well-formed suffixes") {
    const Vocabulary v = extend_vocabulary(96, 8);

    std::vector<TokenId> region{v.region_start, v.coord_x(1), v.coord_y(2),
                                v.coord_x(4),   v.coord_y(5), v.region_end};
    auto r = scan_for_group(v, region);
    REQUIRE(r.has_value());
    REQUIRE(std::holds_alternative<RegionTrigger>(*r));
    CHECK(std::get<RegionTrigger>(*r).cells == CellBox{1, 2, 4, 5});

    std::vector<TokenId> reenc{v.reenc_start, v.reenc_control, v.reenc_end};
    auto e = scan_for_group(v, reenc);
    REQUIRE(e.has_value());
    REQUIRE(std::holds_alternative<ReEncodeTrigger>(*e));
    CHECK(std::get<ReEncodeTrigger>(*e).control_positions == std::vector<int>{1});

    // two control tokens
    std::vector<TokenId> reenc2{v.reenc_start, v.reenc_control, v.reenc_control, v.reenc_end};
    auto e2 = scan_for_group(v, reenc2);
    REQUIRE(e2.has_value());
    CHECK(std::get<ReEncodeTrigger>(*e2).control_positions == std::vector<int>{1, 2});
}

TEST_CASE("scan_for_group reports malformed completions as data") {
    const Vocabulary v = extend_vocabulary(96, 8);

    std::vector<TokenId> bad_order{v.region_start, v.coord_x(1), v.coord_x(2),
                                   v.coord_y(4),   v.coord_y(5), v.region_end};
    auto r = scan_for_group(v, bad_order);
    REQUIRE(r.has_value());
    REQUIRE(std::holds_alternative<MalformedGroup>(*r));
    CHECK(std::get<MalformedGroup>(*r).kind == MalformedKind::BadRegionStructure);

    std::vector<TokenId> inverted{v.region_start, v.coord_x(4), v.coord_y(2),
                                  v.coord_x(1),   v.coord_y(5), v.region_end};
    auto i = scan_for_group(v, inverted);
    REQUIRE(i.has_value());
    CHECK(std::get<MalformedGroup>(*i).kind == MalformedKind::InvertedRegion);

    std::vector<TokenId> bare_end{0, 1, v.region_end};
    auto b = scan_for_group(v, bare_end);
    REQUIRE(b.has_value());
    CHECK(std::get<MalformedGroup>(*b).kind == MalformedKind::BadRegionStructure);

    std::vector<TokenId> no_ctrl{v.reenc_start, v.reenc_end};
    auto n = scan_for_group(v, no_ctrl);
    REQUIRE(n.has_value());
    CHECK(std::get<MalformedGroup>(*n).kind == MalformedKind::BadReEncodeStructure);

    std::vector<TokenId> text{0, 1, 2};
    CHECK_FALSE(scan_for_group(v, text).has_value());
    CHECK_FALSE(scan_for_group(v, std::vector<TokenId>{}).has_value());
}

TEST_CASE("scan fires exactly once per embedded group") {
    const Vocabulary v = extend_vocabulary(96, 8);
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TokenId> stream;
        int expected = 0;
        const int chunks = 1 + static_cast<int>(rng() % 6);
        for (int cidx = 0; cidx < chunks; ++cidx) {
            const int text_len = static_cast<int>(rng() % 8);
            for (int i = 0; i < text_len; ++i)
                stream.push_back(static_cast<TokenId>(rng() % v.base_size));
            const int kind = static_cast<int>(rng() % 3);
            if (kind == 0) {
                const int a = static_cast<int>(rng() % 8), b = static_cast<int>(rng() % 8);
                const int c = a + static_cast<int>(rng() % (8 - a));
                const int d = b + static_cast<int>(rng() % (8 - b));
                const auto toks = encode_region_tokens(v, CellBox{a, b, c, d});
                stream.insert(stream.end(), toks.begin(), toks.end());
                ++expected;
            } else if (kind == 1) {
                stream.push_back(v.reenc_start);
                stream.push_back(v.reenc_control);
                stream.push_back(v.reenc_end);
                ++expected;
            }
        }
        int fired = 0;
        for (size_t n = 1; n <= stream.size(); ++n) {
            const auto trig = scan_for_group(v, std::span(stream.data(), n));
            if (trig.has_value()) {
                REQUIRE_FALSE(std::holds_alternative<MalformedGroup>(*trig));
                ++fired;
            }
        }
        REQUIRE(fired == expected);
    }
}

TEST_CASE("region token codec round trip, exhaustive per k") {
    for (const int k : {4, 8, 16, 32}) {
        const Vocabulary v = extend_vocabulary(96, k);
        for (int x0 = 0; x0 < k; ++x0)
            for (int x1 = x0; x1 < k; ++x1)
                for (int y0 = 0; y0 < k; ++y0)
                    for (int y1 = y0; y1 < k; ++y1) {
                        const CellBox c{x0, y0, x1, y1};
                        REQUIRE(decode_region_tokens(v, encode_region_tokens(v, c)) == c);
                    }
    }
}

TEST_CASE("region token codec errors") {
    const Vocabulary v = extend_vocabulary(96, 8);
    CHECK(encode_region_tokens(v, CellBox{0, 0, 7, 7}) ==
          std::vector<TokenId>{v.region_start, v.coord_x(0), v.coord_y(0), v.coord_x(7),
                               v.coord_y(7), v.region_end});
    const auto single = encode_region_tokens(v, CellBox{3, 3, 3, 3});
    CHECK(single.size() == 6);
    CHECK(single[1] == single[3]);
    CHECK(single[2] == single[4]);

    std::vector<TokenId> inverted{v.region_start, v.coord_x(4), v.coord_y(2),
                                  v.coord_x(1),   v.coord_y(5), v.region_end};
    CHECK_THROWS_AS(decode_region_tokens(v, inverted), inverted_region_error);
    std::vector<TokenId> short_seq{v.region_start, v.coord_x(1), v.coord_y(2), v.coord_x(4),
                                   v.region_end};
    CHECK_THROWS_AS(decode_region_tokens(v, short_seq), malformed_group_error);
    CHECK_THROWS_AS(encode_region_tokens(v, CellBox{0, 0, 8, 7}), std::invalid_argument);
}

TEST_CASE("word table") {
    const WordTable& wt = default_word_table();
    CHECK(wt.size() <= 256);
    const auto ids = wt.encode("how many red glyphs");
    CHECK(wt.decode(ids) == "how many red glyphs");
    CHECK_THROWS_AS(wt.id("zebra"), out_of_range_error);
}

TEST_CASE("bbox text codec") {
    const WordTable& wt = default_word_table();
    const PixelBox b{12, 3, 250, 97};
    const auto toks = encode_bbox_text(wt, b);
    const auto parse = parse_bbox_text(wt, toks, 256, 256);
    REQUIRE(parse.status == BBoxTextParse::Status::Ok);
    CHECK(parse.box == b);

    auto open = toks;
    open.pop_back();
    CHECK(parse_bbox_text(wt, open, 256, 256).status == BBoxTextParse::Status::NotClosed);

    const auto inverted = encode_bbox_text(wt, PixelBox{50, 3, 12, 97});
    CHECK(parse_bbox_text(wt, inverted, 256, 256).status == BBoxTextParse::Status::Inverted);

    const auto oob = encode_bbox_text(wt, PixelBox{12, 3, 400, 97});
    CHECK(parse_bbox_text(wt, oob, 256, 256).status == BBoxTextParse::Status::OutOfBounds);

    const auto junk = wt.encode("how many , 3 .");
    CHECK(parse_bbox_text(wt, junk, 256, 256).status == BBoxTextParse::Status::Unparseable);
}
