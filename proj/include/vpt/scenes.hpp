#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vpt/image.hpp"

namespace vpt {

struct scene_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kGlyphCount = 16;
inline constexpr int kColorCount = 6;
inline constexpr int kGlyphBitmapSide = 5;

// Names double as answer words; they live in the default word table.
const std::vector<std::string>& glyph_names();
const std::vector<std::string>& color_names();

enum class GlyphScale { Large, Tiny };

struct SceneObject {
    int glyph = 0;       // [0, kGlyphCount)
    int color = 0;       // [0, kColorCount)
    int cell_x = 0;      // placement grid column
    int cell_y = 0;      // placement grid row
    GlyphScale scale = GlyphScale::Tiny;

    bool operator==(const SceneObject&) const = default;
};

// Objects sit on a fixed placement grid (cells x cells over a square
// canvas); at most one object per cell. Tiny glyphs draw at 1 px per bitmap
// bit and vanish at global model resolution; large glyphs stay legible.
struct SceneSpec {
    int canvas = 256;
    int cells = 8;
    std::vector<SceneObject> objects;
    uint64_t seed = 0;

    bool operator==(const SceneSpec&) const = default;
};

Image render(const SceneSpec& spec);

// Pixel rectangle of the placement cell holding the object.
PixelBox placement_box(const SceneSpec& spec, const SceneObject& obj);

// ---------------------------------------------------------------------------
// Task records

enum class TaskType { Region, ReEncode, Plain };

struct SourceRecord {
    std::string id;
    SceneSpec scene;
    std::string question;  // words from the default word table
    std::string answer;
    std::optional<PixelBox> gt_box;
    TaskType task_type = TaskType::Plain;
    std::string task_name;
};

enum class TaskKind { LocateTinyGlyph, IdentifyAtCell, CountGlyphs, Caption };

std::string task_kind_name(TaskKind t);
TaskKind task_kind_from_name(const std::string& name);

// Deterministic per (task, n, seed). Region tasks carry the placement box of
// the queried object. Caption records pair a scene with a short description
// for the alignment phase.
std::vector<SourceRecord> gen_records(TaskKind task, int n, uint64_t seed);

// JSONL dataset files.
std::string record_to_json(const SourceRecord& rec);
SourceRecord record_from_json(const std::string& line);
void save_records(const std::string& path, const std::vector<SourceRecord>& recs);
std::vector<SourceRecord> load_records(const std::string& path);

}  // namespace vpt
