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

#include <stdexcept>
#include <string>

namespace sskn {

// Root of every library error. `kind()` is the stable error name used in
// CLI messages and tests.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Errors raised while reading or writing files. The CLI maps these to exit 3.
class FormatError : public Error {
public:
    using Error::Error;
};

#define SSKN_ERROR(Name, Base)                                          \
    class Name : public Base {                                          \
    public:                                                             \
        explicit Name(const std::string& what = "") : Base(#Name, what) {} \
    }

SSKN_ERROR(UnknownToken, Error);
SSKN_ERROR(EmptyInput, Error);
SSKN_ERROR(DimensionMismatch, Error);
SSKN_ERROR(InsufficientTrainingData, Error);
SSKN_ERROR(DuplicateId, Error);
SSKN_ERROR(Untrained, Error);
SSKN_ERROR(EmptyIndex, Error);
SSKN_ERROR(EmptyCorpus, Error);
SSKN_ERROR(EmptyResult, Error);
SSKN_ERROR(EmptyDatastore, Error);
SSKN_ERROR(EmptyNeighbors, Error);
SSKN_ERROR(NonPositiveTemperature, Error);
SSKN_ERROR(LambdaOutOfRange, Error);
SSKN_ERROR(ShapeMismatch, Error);
SSKN_ERROR(GoldProbabilityZero, Error);
SSKN_ERROR(EmptyDataset, Error);
SSKN_ERROR(MissingParams, Error);
SSKN_ERROR(SeparationUnsatisfiable, Error);
SSKN_ERROR(EmptySpeakerSet, Error);
SSKN_ERROR(PrefixTooLong, Error);
SSKN_ERROR(EmptyReference, Error);
SSKN_ERROR(InvalidConfig, Error);

SSKN_ERROR(IoError, FormatError);
SSKN_ERROR(BadMagic, FormatError);
SSKN_ERROR(VersionMismatch, FormatError);
SSKN_ERROR(ChecksumMismatch, FormatError);
SSKN_ERROR(Truncated, FormatError);

#undef SSKN_ERROR

}  // namespace sskn
