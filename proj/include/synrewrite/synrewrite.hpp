// Copyright 2026 The SynRewrite Authors
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

#ifndef SYNREWRITE_SYNREWRITE_HPP_
#define SYNREWRITE_SYNREWRITE_HPP_

#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/leakage.hpp"
#include "synrewrite/pipeline.hpp"
#include "synrewrite/preftrain.hpp"
#include "synrewrite/retrieval.hpp"
#include "synrewrite/synthesis.hpp"
#include "synrewrite/textmetrics.hpp"
#include "synrewrite/tinyseq2seq.hpp"
#include "synrewrite/toyworld.hpp"

#endif  // SYNREWRITE_SYNREWRITE_HPP_
