from img2rna.pipeline import cmd_synth, cmd_preprocess, cmd_train, cmd_eval, cmd_compare
from img2rna.config import load_config
from img2rna.data import get_path
