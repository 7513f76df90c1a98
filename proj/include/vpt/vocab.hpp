#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "vpt/grid_codec.hpp"

namespace vpt {

using TokenId = int;

struct malformed_group_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct inverted_region_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TokenKind {
    Text,
    ImagePlaceholder,
    RegionStart,
    RegionEnd,
    CoordX,
    CoordY,
    ReEncStart,
    ReEncControl,
    ReEncEnd,
    EndOfSequence,
    Pad,
};

struct TokenClass {
    TokenKind kind = TokenKind::Text;
    int index = 0;  // cell index for CoordX / CoordY, otherwise 0

    bool operator==(const TokenClass&) const = default;
};

// Base text ids [0, base_size), then specials in a fixed order:
// region start/end, <x_0>..<x_{k-1}>, <y_0>..<y_{k-1}>, re-encode
// start/control/end, image placeholder, eos, pad. The order is part of the
// checkpoint format; do not reshuffle.
struct Vocabulary {
    int base_size = 0;
    int k = 0;

    TokenId region_start = -1;
    TokenId region_end = -1;
    TokenId coord_x_first = -1;
    TokenId coord_y_first = -1;
    TokenId reenc_start = -1;
    TokenId reenc_control = -1;
    TokenId reenc_end = -1;
    TokenId image_placeholder = -1;
    TokenId eos = -1;
    TokenId pad = -1;
    int total_size = 0;

    TokenId coord_x(int i) const;
    TokenId coord_y(int j) const;
    TokenClass classify(TokenId t) const;
    bool is_text(TokenId t) const { return t >= 0 && t < base_size; }

    bool operator==(const Vocabulary&) const = default;
};

Vocabulary extend_vocabulary(int base_size, int k);

// Canonical display name of a special token ("<region_start>", "<x_3>", ...).
std::string special_token_name(const Vocabulary& v, TokenId t);

std::string vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Perception-group scanning

enum class MalformedKind {
    BadRegionStructure,    // region group closed with wrong arity/classes/order
    InvertedRegion,        // well-shaped region group with cx_max<cx_min or cy_max<cy_min
    BadReEncodeStructure,  // re-encode end without start + >=1 control tokens
};

struct RegionTrigger {
    CellBox cells;
};
struct ReEncodeTrigger {
    std::vector<int> control_positions;  // indices into the scanned stream
};
struct MalformedGroup {
    MalformedKind kind;
};

using PerceptionTrigger = std::variant<RegionTrigger, ReEncodeTrigger, MalformedGroup>;

// Fires only when the stream ends on a group-closing token. Well-formed
// region suffix [start, x_a, y_b, x_c, y_d, end] -> RegionTrigger; re-encode
// suffix [start, ctrl{1..}, end] -> ReEncodeTrigger; a closing token over a
// broken interior -> MalformedGroup. Malformed groups are data, not errors.
std::optional<PerceptionTrigger> scan_for_group(const Vocabulary& vocab,
                                                std::span<const TokenId> stream);

// ---------------------------------------------------------------------------
// Region token codec

// [start, x(cx_min), y(cy_min), x(cx_max), y(cy_max), end]
std::vector<TokenId> encode_region_tokens(const Vocabulary& vocab, const CellBox& c);

// Inverse of the above. Throws malformed_group_error on structural damage and
// inverted_region_error when the interior is ordered backwards.
CellBox decode_region_tokens(const Vocabulary& vocab, std::span<const TokenId> ts);

// ---------------------------------------------------------------------------
// Closed word list backing the base text ids

struct WordTable {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> index;

    explicit WordTable(std::vector<std::string> ws);
    int id(const std::string& w) const;
    std::optional<int> try_id(const std::string& w) const;
    const std::string& word(int id) const;
    std::vector<TokenId> encode(const std::string& sentence) const;  // whitespace split
    std::string decode(std::span<const TokenId> ids) const;          // skips non-text ids
    int size() const { return static_cast<int>(words.size()); }
};

// The fixed word list used by the synthetic tasks: glyph names, colors,
// digits, template words, punctuation, "<sep>".
const WordTable& default_word_table();

// Pretty-print any token (word for base ids, canonical name for specials).
std::string token_to_string(const Vocabulary& v, const WordTable& wt, TokenId t);

// ---------------------------------------------------------------------------
// Raw pixel-coordinate bbox as digit text ("12 , 34 , 56 , 78 ."), the
// direct-bbox baseline representation. The trailing "." closes the group.

std::vector<TokenId> encode_bbox_text(const WordTable& wt, const PixelBox& b);

struct BBoxTextParse {
    enum class Status { Ok, NotClosed, Unparseable, Inverted, OutOfBounds } status;
    PixelBox box;  // valid only when status == Ok
};

// Parses the token run emitted since the assistant turn started; call when
// the last token is ".". img_w/img_h bound the coordinates.
BBoxTextParse parse_bbox_text(const WordTable& wt, std::span<const TokenId> ts, int img_w,
                              int img_h);

}  // namespace vpt
