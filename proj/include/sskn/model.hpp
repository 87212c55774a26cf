// Copyright 2026 The sskn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <span>

#include "sskn/core.hpp"

namespace sskn {

struct StepOutput {
    TokenDistribution p_base;
    Embedding context;
};

// A frozen autoregressive model. `prefix` starts with BOS; the output is the
// posterior of the next token and the decoder context used as retrieval key.
class BaseModel {
public:
    virtual ~BaseModel() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t context_dim() const = 0;
    virtual StepOutput step(std::size_t utterance, std::span<const TokenId> prefix) const = 0;
};

}  // namespace sskn
