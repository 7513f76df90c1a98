#include "vpt/vocab.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

namespace vpt {

TokenId Vocabulary::coord_x(int i) const {
    if (i < 0 || i >= k) throw out_of_range_error("coord_x: index outside [0, k)");
    return coord_x_first + i;
}

TokenId Vocabulary::coord_y(int j) const {
    if (j < 0 || j >= k) throw out_of_range_error("coord_y: index outside [0, k)");
    return coord_y_first + j;
}

TokenClass Vocabulary::classify(TokenId t) const {
    if (t < 0 || t >= total_size) throw out_of_range_error("classify: token id out of range");
    if (t < base_size) return {TokenKind::Text, 0};
    if (t == region_start) return {TokenKind::RegionStart, 0};
    if (t == region_end) return {TokenKind::RegionEnd, 0};
    if (t >= coord_x_first && t < coord_x_first + k) return {TokenKind::CoordX, t - coord_x_first};
    if (t >= coord_y_first && t < coord_y_first + k) return {TokenKind::CoordY, t - coord_y_first};
    if (t == reenc_start) return {TokenKind::ReEncStart, 0};
    if (t == reenc_control) return {TokenKind::ReEncControl, 0};
    if (t == reenc_end) return {TokenKind::ReEncEnd, 0};
    if (t == image_placeholder) return {TokenKind::ImagePlaceholder, 0};
    if (t == eos) return {TokenKind::EndOfSequence, 0};
    return {TokenKind::Pad, 0};
}

Vocabulary extend_vocabulary(int base_size, int k) {
    if (base_size < 1 || k < 2)
        throw std::invalid_argument("extend_vocabulary: need base_size >= 1 and k >= 2");
    Vocabulary v;
    v.base_size = base_size;
    v.k = k;
    int next = base_size;
    v.region_start = next++;
    v.region_end = next++;
    v.coord_x_first = next;
    next += k;
    v.coord_y_first = next;
    next += k;
    v.reenc_start = next++;
    v.reenc_control = next++;
    v.reenc_end = next++;
    v.image_placeholder = next++;
    v.eos = next++;
    v.pad = next++;
    v.total_size = next;
    return v;
}

std::string special_token_name(const Vocabulary& v, TokenId t) {
    const TokenClass c = v.classify(t);
    switch (c.kind) {
        case TokenKind::RegionStart: return "<region_start>";
        case TokenKind::RegionEnd: return "<region_end>";
        case TokenKind::CoordX: return "<x_" + std::to_string(c.index) + ">";
        case TokenKind::CoordY: return "<y_" + std::to_string(c.index) + ">";
        case TokenKind::ReEncStart: return "<reenc_start>";
        case TokenKind::ReEncControl: return "<reenc_ctrl>";
        case TokenKind::ReEncEnd: return "<reenc_end>";
        case TokenKind::ImagePlaceholder: return "<image>";
        case TokenKind::EndOfSequence: return "<eos>";
        case TokenKind::Pad: return "<pad>";
        case TokenKind::Text: break;
    }
    throw std::invalid_argument("special_token_name: not a special token");
}

std::string vocabulary_to_json(const Vocabulary& v) {
    nlohmann::json j;
    j["base_size"] = v.base_size;
    j["k"] = v.k;
    std::vector<std::string> specials;
    for (TokenId t = v.base_size; t < v.total_size; ++t) specials.push_back(special_token_name(v, t));
    j["specials"] = specials;
    return j.dump();
}

Vocabulary vocabulary_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    const Vocabulary v = extend_vocabulary(j.at("base_size").get<int>(), j.at("k").get<int>());
    const auto specials = j.at("specials").get<std::vector<std::string>>();
    if (static_cast<int>(specials.size()) != v.total_size - v.base_size)
        throw std::invalid_argument("vocabulary_from_json: special token count mismatch");
    for (TokenId t = v.base_size; t < v.total_size; ++t)
        if (specials[t - v.base_size] != special_token_name(v, t))
            throw std::invalid_argument("vocabulary_from_json: special token order mismatch");
    return v;
}

// ---------------------------------------------------------------------------

std::optional<PerceptionTrigger> scan_for_group(const Vocabulary& vocab,
                                                std::span<const TokenId> stream) {
    if (stream.empty()) return std::nullopt;
    const int n = static_cast<int>(stream.size());
    const TokenKind last = vocab.classify(stream[n - 1]).kind;

    if (last == TokenKind::RegionEnd) {
        if (n < 6) return MalformedGroup{MalformedKind::BadRegionStructure};
        TokenClass w[5];
        for (int i = 0; i < 5; ++i) w[i] = vocab.classify(stream[n - 6 + i]);
        const bool shaped = w[0].kind == TokenKind::RegionStart && w[1].kind == TokenKind::CoordX &&
                            w[2].kind == TokenKind::CoordY && w[3].kind == TokenKind::CoordX &&
                            w[4].kind == TokenKind::CoordY;
        if (!shaped) return MalformedGroup{MalformedKind::BadRegionStructure};
        const CellBox cells{w[1].index, w[2].index, w[3].index, w[4].index};
        if (cells.cx_max < cells.cx_min || cells.cy_max < cells.cy_min)
            return MalformedGroup{MalformedKind::InvertedRegion};
        return RegionTrigger{cells};
    }

    if (last == TokenKind::ReEncEnd) {
        // [start, ctrl x >=1, end]
        std::vector<int> controls;
        int i = n - 2;
        while (i >= 0 && vocab.classify(stream[i]).kind == TokenKind::ReEncControl) {
            controls.push_back(i);
            --i;
        }
        if (controls.empty() || i < 0 || vocab.classify(stream[i]).kind != TokenKind::ReEncStart)
            return MalformedGroup{MalformedKind::BadReEncodeStructure};
        std::reverse(controls.begin(), controls.end());
        return ReEncodeTrigger{std::move(controls)};
    }

    return std::nullopt;
}

// ---------------------------------------------------------------------------

std::vector<TokenId> encode_region_tokens(const Vocabulary& vocab, const CellBox& c) {
    if (c.cx_min < 0 || c.cy_min < 0 || c.cx_max >= vocab.k || c.cy_max >= vocab.k ||
        c.cx_max < c.cx_min || c.cy_max < c.cy_min)
        throw std::invalid_argument("encode_region_tokens: cell box invalid for k");
    return {vocab.region_start,       vocab.coord_x(c.cx_min), vocab.coord_y(c.cy_min),
            vocab.coord_x(c.cx_max), vocab.coord_y(c.cy_max), vocab.region_end};
}

CellBox decode_region_tokens(const Vocabulary& vocab, std::span<const TokenId> ts) {
    if (ts.size() != 6) throw malformed_group_error("decode_region_tokens: need exactly 6 tokens");
    TokenClass c[6];
    for (int i = 0; i < 6; ++i) c[i] = vocab.classify(ts[i]);
    const bool shaped = c[0].kind == TokenKind::RegionStart && c[1].kind == TokenKind::CoordX &&
                        c[2].kind == TokenKind::CoordY && c[3].kind == TokenKind::CoordX &&
                        c[4].kind == TokenKind::CoordY && c[5].kind == TokenKind::RegionEnd;
    if (!shaped) throw malformed_group_error("decode_region_tokens: wrong classes or order");
    const CellBox cells{c[1].index, c[2].index, c[3].index, c[4].index};
    if (cells.cx_max < cells.cx_min || cells.cy_max < cells.cy_min)
        throw inverted_region_error("decode_region_tokens: inverted region");
    return cells;
}

// ---------------------------------------------------------------------------

WordTable::WordTable(std::vector<std::string> ws) : words(std::move(ws)) {
    for (int i = 0; i < static_cast<int>(words.size()); ++i) index.emplace(words[i], i);
    if (index.size() != words.size())
        throw std::invalid_argument("WordTable: duplicate words");
}

int WordTable::id(const std::string& w) const {
    const auto it = index.find(w);
    if (it == index.end()) throw out_of_range_error("WordTable: unknown word '" + w + "'");
    return it->second;
}

std::optional<int> WordTable::try_id(const std::string& w) const {
    const auto it = index.find(w);
    if (it == index.end()) return std::nullopt;
    return it->second;
}

const std::string& WordTable::word(int id) const {
    if (id < 0 || id >= size()) throw out_of_range_error("WordTable: id out of range");
    return words[id];
}

std::vector<TokenId> WordTable::encode(const std::string& sentence) const {
    std::vector<TokenId> out;
    std::istringstream ss(sentence);
    std::string w;
    while (ss >> w) out.push_back(id(w));
    return out;
}

std::string WordTable::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (const TokenId t : ids) {
        if (t < 0 || t >= size()) continue;
        if (!out.empty()) out += ' ';
        out += words[t];
    }
    return out;
}

const WordTable& default_word_table() {
    static const WordTable table{{
        // template / question words
        "<sep>", "which", "what", "how", "where", "is", "are", "the", "at", "of", "one",
        "many", "a", "glyph", "glyphs", "object", "objects", "color", "colored", "cell",
        "col", "row", "region", "box", "answer", "question", "features", "perception",
        "identify", "request", "find", "count", "help", "helps", "please", "then",
        "needed", "use", "extra", "and", "that", "can", "you", "better",
        // colors
        "red", "green", "blue", "yellow", "cyan", "magenta",
        // glyph names
        "arch", "bolt", "crab", "dune", "echo", "fern", "gate", "hive", "iris", "jade",
        "kite", "lamp", "moss", "nook", "opal", "pine",
        // digits and punctuation
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ",", ".",
    }};
    return table;
}

std::string token_to_string(const Vocabulary& v, const WordTable& wt, TokenId t) {
    if (v.is_text(t)) return t < wt.size() ? wt.word(t) : "t" + std::to_string(t);
    return special_token_name(v, t);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<TokenId> encode_number(const WordTable& wt, int value) {
    std::vector<TokenId> out;
    for (const char ch : std::to_string(value)) out.push_back(wt.id(std::string(1, ch)));
    return out;
}

}  // namespace

std::vector<TokenId> encode_bbox_text(const WordTable& wt, const PixelBox& b) {
    std::vector<TokenId> out;
    const int comma = wt.id(",");
    const int values[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
    for (int i = 0; i < 4; ++i) {
        if (i) out.push_back(comma);
        const auto digits = encode_number(wt, values[i]);
        out.insert(out.end(), digits.begin(), digits.end());
    }
    out.push_back(wt.id("."));
    return out;
}

BBoxTextParse parse_bbox_text(const WordTable& wt, std::span<const TokenId> ts, int img_w,
                              int img_h) {
    const int comma = wt.id(",");
    const int stop = wt.id(".");
    if (ts.empty() || ts.back() != stop) return {BBoxTextParse::Status::NotClosed, {}};

    int values[4] = {0, 0, 0, 0};
    int field = 0;
    bool has_digit = false;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        const TokenId t = ts[i];
        if (t == comma) {
            if (!has_digit || field >= 3) return {BBoxTextParse::Status::Unparseable, {}};
            ++field;
            has_digit = false;
            continue;
        }
        if (t < 0 || t >= wt.size()) return {BBoxTextParse::Status::Unparseable, {}};
        const std::string& w = wt.word(t);
        if (w.size() != 1 || w[0] < '0' || w[0] > '9')
            return {BBoxTextParse::Status::Unparseable, {}};
        values[field] = values[field] * 10 + (w[0] - '0');
        if (values[field] > 1000000) return {BBoxTextParse::Status::Unparseable, {}};
        has_digit = true;
    }
    if (field != 3 || !has_digit) return {BBoxTextParse::Status::Unparseable, {}};

    const PixelBox box{values[0], values[1], values[2], values[3]};
    if (box.x_max <= box.x_min || box.y_max <= box.y_min)
        return {BBoxTextParse::Status::Inverted, box};
    if (box.x_min < 0 || box.y_min < 0 || box.x_max > img_w || box.y_max > img_h)
        return {BBoxTextParse::Status::OutOfBounds, box};
    return {BBoxTextParse::Status::Ok, box};
}

}  // namespace vpt
