#pragma once

namespace cac::embedded {

extern const char* const default_rules_json;
extern const char* const icd_crosswalk_json;

}  // namespace cac::embedded
