// Copyright 2026 The GanMask Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Umbrella include.

#pragma once

#include "ganmask/box.hpp"
#include "ganmask/checkpoint.hpp"
#include "ganmask/config.hpp"
#include "ganmask/discriminators.hpp"
#include "ganmask/errors.hpp"
#include "ganmask/eval.hpp"
#include "ganmask/gradcheck.hpp"
#include "ganmask/heads.hpp"
#include "ganmask/inference.hpp"
#include "ganmask/layers.hpp"
#include "ganmask/losses.hpp"
#include "ganmask/ops.hpp"
#include "ganmask/optim.hpp"
#include "ganmask/prroi.hpp"
#include "ganmask/synthdata.hpp"
#include "ganmask/tensor.hpp"
#include "ganmask/trainer.hpp"
