import logging

from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.synthgen import generate, misalign, misalign_frames
from event_detection.storage.box_storage import write_box_frames
from event_detection.storage.dataset_storage import BOXES_SUFFIX, write_scene
from labeling.storage.frame_storage import write_frames
from labeling.storage.homography_storage import read_homography

logger = logging.getLogger(__name__)

FRAME_LABELS_DIR = 'frame_labels'
FRAMES_DIR = 'frames'


class SynthInteractor(PipelineInteractor):
    """Writes <out>/scene_NNN.{evt,boxes.jsonl,meta.json}; scene i uses seed + i.

    With --frames, the frame camera's view (PGM per frame) goes to <out>/frames/scene_NNN/
    and its labels, in its own clock and pixel grid, to <out>/frame_labels/.
    """

    command = 'synth'

    def execute(self, context: RunContext, count: int = 1, frames: bool = False, offset_us: int = 0,
                homography: str | None = None) -> dict:
        matrix = read_homography(homography).matrix if homography else [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
        base = context.config.scene
        sequences = []
        for index in range(count):
            name = f'scene_{index:03d}'
            scene = generate(base.model_copy(update={'seed': base.seed + index}))
            write_scene(scene, context.out_dir, name)
            record = {
                'name': name,
                'seed': base.seed + index,
                'events': len(scene.stream),
                'boxes': sum(len(frame) for frame in scene.frames),
                'stops': len(scene.stops),
            }
            if frames:
                _, frame_labels = misalign(scene, offset_us, matrix)
                write_box_frames(frame_labels, context.out_dir / FRAME_LABELS_DIR / f'{name}{BOXES_SUFFIX}')
                images = misalign_frames(scene, offset_us, matrix)
                write_frames(images, context.out_dir / FRAMES_DIR / name)
                record['frames'] = len(images)
            sequences.append(record)
            logger.info('Wrote %s: %d events', name, record['events'])
        return {
            'sequences': sequences,
            'offset_us': offset_us if frames else 0,
            'homography': [list(map(float, row)) for row in matrix] if frames else None,
        }
