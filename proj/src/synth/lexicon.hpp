#pragma once

#include <array>
#include <string_view>
#include <vector>

// Word pools and sentence templates of the synthetic report generator. The
// first entry of every pool is the canonical form used in impressions.
namespace pf::synth::lexicon {

using Pool = std::vector<std::string_view>;

inline const std::array<Pool, 2> kIntensity{{
    {"faint", "subtle", "hazy", "pale"},
    {"dense", "bright", "solid", "opaque"},
}};

inline const std::array<Pool, 5> kShape{{
    {"disc", "circle", "round", "nodule"},
    {"bar", "band", "stripe", "strip"},
    {"ring", "annulus", "loop", "hoop"},
    {"wedge", "triangle", "sector", "spike"},
    {"blob", "mass", "cluster", "clump"},
}};

inline const std::array<Pool, 2> kVertical{{
    {"upper", "top", "superior"},
    {"lower", "bottom", "inferior"},
}};

inline const std::array<Pool, 2> kHorizontal{{{"left"}, {"right"}}};

// Findings sentence per attribute. Slots: I intensity, S shape, V vertical, H horizontal.
inline const std::vector<std::vector<std::string_view>> kFindingTemplates{
    {"a", "I", "S", "is", "seen", "in", "the", "V", "H", "region"},
    {"there", "is", "a", "I", "S", "in", "the", "V", "H", "zone"},
    {"I", "S", "noted", "at", "the", "V", "H", "field"},
    {"the", "V", "H", "area", "shows", "a", "I", "S"},
};

inline const std::vector<std::string_view> kFindingsEmpty{"the", "field", "is", "clear"};

inline const std::vector<std::vector<std::string_view>> kFillers{
    {"image", "quality", "is", "adequate"},
    {"the", "background", "is", "unremarkable"},
    {"margins", "are", "sharp"},
    {"no", "artefact", "is", "present"},
    {"exposure", "is", "within", "normal", "limits"},
    {"the", "study", "is", "technically", "satisfactory"},
    {"comparison", "with", "prior", "is", "limited"},
    {"the", "remaining", "field", "is", "quiet"},
    {"contrast", "is", "preserved", "throughout"},
    {"positioning", "is", "standard"},
};

// Impression clause per attribute, canonical words only.
inline const std::vector<std::vector<std::string_view>> kImpressionTemplates{
    {"I", "S", "V", "H"},
    {"V", "H", "I", "S"},
    {"I", "S", "remains", "visible", "V", "H"},
};

inline constexpr std::string_view kJoin = "and";

inline const std::vector<std::vector<std::string_view>> kImpressionEmpty{
    {"no", "acute", "finding"},
    {"there", "is", "no", "evidence", "of", "abnormality"},
};

// Words used only by zero-shot prompts.
inline const std::vector<std::string_view> kPromptWords{"remains", "visible", "there", "is",
                                                        "no",      "evidence", "of"};

}  // namespace pf::synth::lexicon
