#pragma once

#include "vqarank/checkpoint.hpp"
#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/eval.hpp"
#include "vqarank/feature_file.hpp"
#include "vqarank/gradcheck.hpp"
#include "vqarank/grounding.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/manifest.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/optimizer.hpp"
#include "vqarank/qa_select.hpp"
#include "vqarank/ranker_training.hpp"
#include "vqarank/ranking.hpp"
#include "vqarank/rng.hpp"
#include "vqarank/synthetic.hpp"
#include "vqarank/version.hpp"
#include "vqarank/vqa_head.hpp"
