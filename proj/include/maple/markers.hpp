// Copyright 2026 The Maple Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Structural markers shared between prompt construction and the mock
// backend's prompt parser. Editable prompt templates must keep these
// markers intact for the mock backend to recognize the prompt kind.

#pragma once

namespace maple {

inline constexpr const char* kGenerationTaskMarker =
    "Task: write one synthetic document";
inline constexpr const char* kVariationTaskMarker = "Task: paraphrase";
inline constexpr const char* kExtractionMarker = "CRITICAL INSTRUCTION 1";
inline constexpr const char* kTargetMetadataHeader = "Target metadata:";
inline constexpr const char* kDocumentOpen = "<<<";
inline constexpr const char* kDocumentClose = ">>>";
inline constexpr const char* kExtractionTextHeader = "**Document to analyze:**";
inline constexpr const char* kExtractionOutputHeader = "**Your output (JSON only):**";

}  // namespace maple
