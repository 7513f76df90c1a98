#include "vpt/engine.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace vpt {

std::vector<TokenId> GenerationTrace::answer_tokens(const Vocabulary& vocab) const {
    int from = 0;
    for (const auto& e : events)
        if (e.executed) from = std::max(from, e.at_generated);
    std::vector<TokenId> out;
    for (size_t i = from; i < generated.size(); ++i)
        if (vocab.classify(generated[i]).kind == TokenKind::Text) out.push_back(generated[i]);
    return out;
}

namespace {

const char* role_name(TraceRole r) {
    switch (r) {
        case TraceRole::PromptText: return "prompt-text";
        case TraceRole::ImagePrimary: return "image-primary";
        case TraceRole::Generated: return "generated";
        case TraceRole::ImageCrop: return "image-crop";
        case TraceRole::ImageReEncoded: return "image-reencoded";
    }
    return "?";
}

const char* stop_name(StopReason s) {
    switch (s) {
        case StopReason::Eos: return "eos";
        case StopReason::TokenBudget: return "token-budget";
        case StopReason::PerceptionBudget: return "perception-budget";
    }
    return "?";
}

}  // namespace

std::string trace_to_json(const GenerationTrace& t) {
    nlohmann::json j;
    j["prompt"] = t.prompt;
    j["generated"] = t.generated;
    auto& layout = j["layout"] = nlohmann::json::array();
    for (const auto& seg : t.layout)
        layout.push_back({{"role", role_name(seg.role)}, {"len", seg.length}});
    auto& events = j["events"] = nlohmann::json::array();
    for (const auto& e : t.events) {
        nlohmann::json je;
        je["executed"] = e.executed;
        je["at_generated"] = e.at_generated;
        switch (e.kind) {
            case PerceptionEvent::Kind::RegionSelection:
                je["kind"] = "region";
                je["cells"] = {e.cells.cx_min, e.cells.cy_min, e.cells.cx_max, e.cells.cy_max};
                je["pixel_box"] = {e.pixel_box.x_min, e.pixel_box.y_min, e.pixel_box.x_max,
                                   e.pixel_box.y_max};
                break;
            case PerceptionEvent::Kind::ReEncode:
                je["kind"] = "reencode";
                je["control_positions"] = e.control_positions;
                break;
            case PerceptionEvent::Kind::Malformed:
                je["kind"] = "malformed";
                je["malformed_kind"] = static_cast<int>(e.malformed_kind);
                break;
        }
        events.push_back(std::move(je));
    }
    j["stop"] = stop_name(t.stop);
    return j.dump();
}

void append_trace(const std::string& path, const GenerationTrace& t) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("append_trace: cannot open " + path);
    out << trace_to_json(t) << '\n';
}

Layout sample_layout(const DialogueSample& s) {
    Layout layout;
    for (const auto& r : s.rows) {
        TraceRole role;
        switch (r.kind) {
            case RowKind::ImagePrimaryFeat: role = TraceRole::ImagePrimary; break;
            case RowKind::ImageCropFeat: role = TraceRole::ImageCrop; break;
            case RowKind::ImageReEncFeat: role = TraceRole::ImageReEncoded; break;
            case RowKind::Token:
            default:
                role = (r.role == SegmentRole::AssistantVpt ||
                        r.role == SegmentRole::AssistantAnswer)
                           ? TraceRole::Generated
                           : TraceRole::PromptText;
        }
        detail::layout_push(layout, role, 1);
    }
    return layout;
}

}  // namespace vpt
